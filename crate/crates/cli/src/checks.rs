//! Analytic covariance-gradient checks against central finite differences,
//! and the timing comparison of the two.

use std::time::Instant;

use anyhow::Result;
use aoa_nav_core::ekf::{covariance_gradients, covariance_gradients_fd, FilterState, GradientBundle};
use aoa_nav_core::models::{first_order_por, AoaModel, EstimationModel, LineOfReflection, ModelVariant, NoiseConfig, SyntheticModel};
use aoa_nav_core::Point;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Finite-difference step used by the checks.
pub const FD_STEP: f64 = 1e-5;

fn random_spd(rng: &mut ChaCha8Rng, l: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(l, l, |_, _| rng.random_range(-1.0..1.0));
    (&a * a.transpose() + DMatrix::identity(l, l) * 0.1) * scale
}

fn random_noise(rng: &mut ChaCha8Rng) -> NoiseConfig {
    NoiseConfig {
        robot_std: rng.random_range(0.005..0.5),
        static_std: rng.random_range(1e-4..0.1),
        sigma_alpha: rng.random_range(0.02..0.4),
    }
}

/// Random LOS draw: robot 3 to 57 m from the transponder.
pub fn random_los(rng: &mut ChaCha8Rng) -> (AoaModel, FilterState, DVector<f64>) {
    let noise = random_noise(rng);
    let model = AoaModel::new(ModelVariant::Los, &noise);
    let x = loop {
        let x = DVector::from_fn(2, |_, _| rng.random_range(-40.0..40.0));
        if x.norm() > 3.0 {
            break x;
        }
    };
    let u = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
    let scale = rng.random_range(0.05..3.0);
    let p = random_spd(rng, 2, scale);
    (model, FilterState { x, p }, u)
}

/// Random known-LOR draw with the predicted robot and the transponder on the
/// same side of the line, at least 2 m from it and from the reflection point.
pub fn random_known_lor(rng: &mut ChaCha8Rng) -> (AoaModel, FilterState, DVector<f64>) {
    let noise = random_noise(rng);
    loop {
        let lor = LineOfReflection::new(rng.random_range(-1.0..1.0), rng.random_range(-5.0..5.0));
        let p = Point::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let tx = Point::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let u = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let q = p + Point::new(u[0], u[1]);
        let (dq, dt) = (lor.signed_distance(&q), lor.signed_distance(&tx));
        if dq * dt <= 0.0 || dq.abs() < 2.0 || dt.abs() < 2.0 {
            continue;
        }
        let Ok(r) = first_order_por(&q, &tx, &lor) else { continue };
        if (r - q).norm() < 2.0 {
            continue;
        }
        let model = AoaModel::new(ModelVariant::NlosKnownLor { lor }, &noise);
        let x = DVector::from_vec(vec![p.x, p.y, tx.x, tx.y]);
        let scale = rng.random_range(0.05..2.0);
        let cov = random_spd(rng, 4, scale);
        return (model, FilterState { x, p: cov }, u);
    }
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Largest relative error over the three derivative blocks.
pub fn bundle_error(a: &GradientBundle, fd: &GradientBundle) -> f64 {
    rel_err(&a.dp_dx, &fd.dp_dx).max(rel_err(&a.dp_dp, &fd.dp_dp)).max(rel_err(&a.dp_du, &fd.dp_du))
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub draws: usize,
    pub los_max_rel_error: f64,
    pub known_lor_max_rel_error: f64,
    pub seconds: f64,
}

pub fn gradient_check(draws: usize, seed: u64) -> Result<GradCheckReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 2];
    for _ in 0..draws {
        for (k, (model, fs, u)) in [random_los(&mut rng), random_known_lor(&mut rng)].into_iter().enumerate() {
            let a = covariance_gradients(&model, &fs, &u)?;
            let n = covariance_gradients_fd(&model, &fs, &u, FD_STEP)?;
            worst[k] = worst[k].max(bundle_error(&a, &n));
        }
    }
    Ok(GradCheckReport {
        draws,
        los_max_rel_error: worst[0],
        known_lor_max_rel_error: worst[1],
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    pub l: usize,
    pub analytic_seconds: f64,
    pub fd_seconds: f64,
}

fn time_per_call(f: impl Fn() -> Result<()>, min_seconds: f64) -> Result<f64> {
    f()?;
    let mut best = f64::INFINITY;
    // best of three batches; each batch runs long enough to swamp timer noise
    for _ in 0..3 {
        let start = Instant::now();
        let mut calls = 0usize;
        while start.elapsed().as_secs_f64() < min_seconds {
            f()?;
            calls += 1;
        }
        best = best.min(start.elapsed().as_secs_f64() / calls as f64);
    }
    Ok(best)
}

/// Per-call time of the analytic and the finite-difference gradients on the
/// synthetic model for each state dimension.
pub fn gradient_timing(ls: &[usize], min_seconds: f64) -> Result<Vec<TimingRow>> {
    ls.iter()
        .map(|&l| {
            let model = SyntheticModel::new(l)?;
            let fs = FilterState {
                x: DVector::from_element(l, 0.3),
                p: DMatrix::identity(l, l) * 0.5,
            };
            let u = DVector::zeros(model.control_dim());
            let analytic = time_per_call(|| covariance_gradients(&model, &fs, &u).map(|_| ()).map_err(Into::into), min_seconds)?;
            let fd = time_per_call(
                || covariance_gradients_fd(&model, &fs, &u, FD_STEP).map(|_| ()).map_err(Into::into),
                min_seconds,
            )?;
            Ok(TimingRow {
                l,
                analytic_seconds: analytic,
                fd_seconds: fd,
            })
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
