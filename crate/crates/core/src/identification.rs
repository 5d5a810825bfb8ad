//! Filter identification runs on simple maps: the robot makes random
//! moves, measures noisy AoA and runs one EKF from a
//! badly initialized estimate.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[cfg(not(feature = "std"))]
use num_traits::Float as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ekf::{ekf_step, FilterState};
use crate::geometry::{Bounds, Point};
use crate::models::{AoaModel, LineOfReflection, ModelVariant, NoiseConfig};
use crate::world::{corrupt_measurement, trace_signal, AoAMeasurement, Environment, LinkState};
use crate::{Error, Result};

/// Parameters shared by the LOS and known-LOR runs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct IdentificationConfig {
    pub steps: usize,
    pub sigma_alpha: f64,
    /// Norm of the initial estimate error (m).
    pub initial_error: f64,
    /// Random controls are uniform in `[-u_max, u_max]^2` (m).
    pub u_max: f64,
    /// Distance between the robot start and the transponder (m).
    pub range: f64,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            sigma_alpha: 0.05,
            initial_error: 40.0,
            u_max: 1.0,
            range: 20.0,
        }
    }
}

/// Per-step truth and estimate of the robot position.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IdentificationRun {
    pub truth: Vec<Point>,
    pub estimate: Vec<Point>,
    /// Estimated position covariance entries `[xx, xy, yy]`.
    pub cov: Vec<[f64; 3]>,
    /// Point of reflection of the true path at the final step, if any.
    pub final_por: Option<Point>,
}

impl IdentificationRun {
    pub fn errors(&self) -> Vec<f64> {
        self.truth.iter().zip(&self.estimate).map(|(t, e)| (t - e).norm()).collect()
    }

    pub fn final_error(&self) -> f64 {
        self.errors().last().copied().unwrap_or(f64::NAN)
    }
}

fn unit(rng: &mut ChaCha8Rng) -> Point {
    let a = rng.random_range(0.0..core::f64::consts::TAU);
    Point::new(a.cos(), a.sin())
}

fn gauss2(rng: &mut ChaCha8Rng, std: f64) -> Point {
    Point::new(StandardNormal.sample(rng), StandardNormal.sample(rng)) * std
}

/// LOS run: transponder at the origin of an open field, filter state is the
/// robot relative to the transponder.
pub fn los_identification(cfg: &IdentificationConfig, seed: u64) -> Result<IdentificationRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = cfg.range + 4.0 * cfg.u_max * (cfg.steps as f64).sqrt() + 10.0;
    let env = Environment::new(vec![], vec![], Point::zeros(), Bounds::new(Point::new(-half, -half), Point::new(half, half)))?;
    let noise = NoiseConfig {
        sigma_alpha: cfg.sigma_alpha,
        ..NoiseConfig::default()
    };
    let model = AoaModel::new(ModelVariant::Los, &noise);
    let p = unit(&mut rng) * cfg.range;
    let x0 = p + unit(&mut rng) * cfg.initial_error;
    // isotropic prior whose expected squared error matches the offset
    let var = cfg.initial_error * cfg.initial_error / 2.0;
    let fs = FilterState::new(DVector::from_column_slice(x0.as_slice()), DMatrix::identity(2, 2) * var)?;
    let signal = |q: &Point| -> Option<(AoAMeasurement, Point)> {
        if (q - env.tx).norm() < 2.0 {
            return None;
        }
        trace_signal(&env, q).ok().flatten().filter(|m| m.link == LinkState::Los).map(|m| (m, env.tx))
    };
    run(&model, fs, p, env.tx, cfg, &noise, &mut rng, signal)
}

/// Known-LOR run: a reflecting line `y = 0` with robot and transponder
/// above it and only the reflected path received. The filter state is
/// `[p, p_tx]` with the transponder known and the robot position off by
/// `initial_error`.
pub fn known_lor_identification(cfg: &IdentificationConfig, seed: u64) -> Result<IdentificationRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tx = Point::new(0.0, 4.0);
    let noise = NoiseConfig {
        sigma_alpha: cfg.sigma_alpha,
        ..NoiseConfig::default()
    };
    let lor = LineOfReflection::new(0.0, 0.0);
    let model = AoaModel::new(ModelVariant::NlosKnownLor { lor }, &noise);
    let a: f64 = rng.random_range(0.15..0.6);
    let p = tx + Point::new(-a.cos(), a.sin()) * cfg.range;
    let mut x0p = p + unit(&mut rng) * cfg.initial_error;
    x0p.y = x0p.y.abs().max(1.0);
    let var = cfg.initial_error * cfg.initial_error / 2.0;
    let mut p0 = DMatrix::zeros(4, 4);
    p0[(0, 0)] = var;
    p0[(1, 1)] = var;
    p0[(2, 2)] = 1e-8;
    p0[(3, 3)] = 1e-8;
    let fs = FilterState::new(DVector::from_vec(vec![x0p.x, x0p.y, tx.x, tx.y]), p0)?;
    // image source below the line; the reflection point is where the ray
    // to it crosses y = 0
    let image = Point::new(tx.x, -tx.y);
    let signal = |q: &Point| -> Option<(AoAMeasurement, Point)> {
        if q.y < 1.0 || (q - tx).norm() < 2.0 {
            return None;
        }
        let por = q + (image - q) * (q.y / (q.y - image.y));
        let d = por - q;
        Some((AoAMeasurement::new(d.y.atan2(d.x), LinkState::Nlos { walls: vec![0] }), por))
    };
    run(&model, fs, p, Point::zeros(), cfg, &noise, &mut rng, signal)
}

#[allow(clippy::too_many_arguments)]
fn run(
    model: &AoaModel,
    mut fs: FilterState,
    mut p: Point,
    origin: Point,
    cfg: &IdentificationConfig,
    noise: &NoiseConfig,
    rng: &mut ChaCha8Rng,
    signal: impl Fn(&Point) -> Option<(AoAMeasurement, Point)>,
) -> Result<IdentificationRun> {
    let mut out = IdentificationRun {
        truth: Vec::with_capacity(cfg.steps),
        estimate: Vec::with_capacity(cfg.steps),
        cov: Vec::with_capacity(cfg.steps),
        final_por: None,
    };
    let reach = cfg.range + 4.0 * cfg.u_max * (cfg.steps as f64).sqrt();
    for _ in 0..cfg.steps {
        // random step, redrawn while it would lose the link or wander off
        let mut u = Point::zeros();
        for _ in 0..20 {
            let cand = Point::new(rng.random_range(-cfg.u_max..=cfg.u_max), rng.random_range(-cfg.u_max..=cfg.u_max));
            let q = p + cand;
            if (q - origin).norm() < reach && signal(&q).is_some() {
                u = cand;
                break;
            }
        }
        let moved = p + u + gauss2(rng, noise.robot_std);
        if signal(&moved).is_some() {
            p = moved;
        }
        let (truth, por) = signal(&p).ok_or_else(|| Error::Geometry("identification robot lost the signal".into()))?;
        let m = corrupt_measurement(&truth, cfg.sigma_alpha, 0.0, rng);
        let z = DVector::from_column_slice(m.unit.as_slice());
        let (next, _) = ekf_step(model, &fs, &DVector::from_column_slice(u.as_slice()), Some(&z))?;
        fs = next;
        out.truth.push(p - origin);
        out.estimate.push(Point::new(fs.x[0], fs.x[1]));
        out.cov.push([fs.p[(0, 0)], fs.p[(0, 1)], fs.p[(1, 1)]]);
        out.final_por = (!matches!(truth.link, LinkState::Los)).then_some(por);
    }
    Ok(out)
}
