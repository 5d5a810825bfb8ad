//! Closed-loop controller: sensing, the EKF bank, mode selection, goal
//! choice, periodic replanning and exploration.
//!
//! The robot knows its own map-frame position (odometry). What it does not
//! know is the transponder position, which every filter in the bank
//! estimates in its own parametrization.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector2};
#[cfg(not(feature = "std"))]
use num_traits::Float as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bench::{aoa_follower_step, shortest_path, OccupancyGrid};
use crate::ekf::{ekf_step, FilterState};
use crate::geometry::{line_params, unit, Bounds, Point};
use crate::mapping::{cluster_walls, cover_with_circles, intersect_ray_lor, match_lor, MapConfig, PointCloud2D, WallCluster};
use crate::models::{first_order_por, reflect_across, AoaModel, EstimationModel, LineOfReflection, ModelVariant, NoiseConfig};
use crate::planner::{solve_from, BeliefState, CostWeights, ObstacleSet, PlanningProblem, SolverSettings};
use crate::world::{corrupt_measurement, trace_signal, AoAMeasurement, Circle, Environment, LinkState, UNKNOWN_WALL};
use crate::{Error, Result};

/// How the robot is steered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Strategy {
    /// EKF bank plus belief-space planner.
    Ekf,
    /// Step along the measured AoA, no filtering.
    AoaFollower,
    /// Follows the shortest collision-free path to the true transponder.
    KnownTx,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ControllerConfig {
    pub strategy: Strategy,
    /// Control cycles between replans.
    pub replan_period: usize,
    /// Planning horizon cap; legs longer than it use `long_horizon`.
    pub horizon: usize,
    pub long_horizon: usize,
    /// Planned average speed as a fraction of `u_max`; sets the horizon of
    /// a leg from its length.
    pub planned_speed: f64,
    pub mahalanobis_gate: f64,
    /// Half-life (cycles) of the moving average of the LOS innovation
    /// Mahalanobis distance.
    pub gate_half_life: f64,
    pub t_low: f64,
    pub t_high: f64,
    pub q_n: f64,
    pub r: f64,
    pub u_max: f64,
    pub arrival_radius: f64,
    pub por_offset: f64,
    pub max_cycles: usize,
    pub r_rob: f64,
    /// Chance-constraint inflation. The filter covariance describes the
    /// transponder uncertainty, not the robot pose, so this is 0 by default.
    pub n_std: f64,
    pub sensor_range: f64,
    pub sensor_rays: usize,
    pub sensor_std: f64,
    /// Grid pitch (m) for de-duplicating scan points.
    pub cloud_resolution: f64,
    pub cover_cell: f64,
    pub cover_margin: f64,
    /// Only scan points this close to the robot are re-clustered.
    pub cluster_radius: f64,
    pub wall_pad: f64,
    /// Assumed range of the first LOS estimate (m).
    pub los_init_range: f64,
    /// Distance (m) beyond the hit point along the AoA ray of the first
    /// image-source guess of a new NLOS filter.
    pub nlos_init_beyond: f64,
    /// Lower bound of the filter AoA noise std, so that noise-free runs keep
    /// a well-conditioned innovation covariance.
    pub sigma_floor: f64,
    pub robot_std: f64,
    pub static_std: f64,
    /// Exploration target lifetime in cycles.
    pub explore_patience: usize,
    pub solver: SolverSettings,
    /// Plans whose worst constraint exceeds this are rejected.
    pub accept_violation: f64,
    pub map: MapConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Ekf,
            replan_period: 10,
            horizon: 100,
            long_horizon: 200,
            planned_speed: 0.9,
            mahalanobis_gate: 0.1,
            gate_half_life: 5.0,
            t_low: 1.0,
            t_high: 50.0,
            q_n: 50.0,
            r: 0.01,
            u_max: 1.0,
            arrival_radius: 1.0,
            por_offset: 3.0,
            max_cycles: 500,
            r_rob: 0.3,
            n_std: 0.0,
            sensor_range: 8.0,
            sensor_rays: 72,
            sensor_std: 0.02,
            cloud_resolution: 0.1,
            cover_cell: 0.5,
            cover_margin: 0.1,
            cluster_radius: 10.0,
            wall_pad: 0.5,
            los_init_range: 10.0,
            nlos_init_beyond: 10.0,
            sigma_floor: 0.02,
            robot_std: 0.01,
            static_std: 1e-4,
            explore_patience: 50,
            solver: SolverSettings {
                max_iter: 60,
                time_limit: Some(2.0),
                ..SolverSettings::default()
            },
            accept_violation: 1e-3,
            map: MapConfig::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.planned_speed,
            self.mahalanobis_gate,
            self.gate_half_life,
            self.q_n,
            self.r,
            self.u_max,
            self.arrival_radius,
            self.por_offset,
            self.sensor_range,
            self.cloud_resolution,
            self.cover_cell,
            self.cover_margin,
            self.cluster_radius,
            self.los_init_range,
            self.nlos_init_beyond,
            self.sigma_floor,
            self.robot_std,
            self.static_std,
            self.accept_violation,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("controller parameters must be positive".into()));
        }
        let non_negative = [self.t_low, self.t_high, self.r_rob, self.n_std, self.sensor_std, self.wall_pad];
        if non_negative.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("weights and margins must be non-negative".into()));
        }
        if self.replan_period == 0 || self.max_cycles == 0 || self.explore_patience == 0 || self.sensor_rays == 0 {
            return Err(Error::Config("periods, cycle limits and ray counts must be positive".into()));
        }
        if self.horizon < 2 || self.long_horizon < self.horizon {
            return Err(Error::Config("horizon must be at least 2 and not above long_horizon".into()));
        }
        Ok(())
    }

    /// Filter noise for a given true AoA noise level.
    pub fn filter_noise(&self, sigma: f64) -> NoiseConfig {
        NoiseConfig {
            robot_std: self.robot_std,
            static_std: self.static_std,
            sigma_alpha: sigma.max(self.sigma_floor),
        }
    }

    /// Horizon for a new leg of length `d`.
    pub fn horizon_for(&self, d: f64) -> usize {
        let steps = libm::ceil(d / (self.planned_speed * self.u_max)) as usize + 5;
        if steps > self.horizon {
            self.long_horizon.min(steps)
        } else {
            steps.clamp(5.min(self.horizon), self.horizon)
        }
    }

    /// Horizon of a replan `remaining` cycles before the leg deadline, at
    /// least long enough to cover `d` at full speed.
    pub fn replan_horizon(&self, remaining: usize, d: f64) -> usize {
        let needed = libm::ceil(d / self.u_max) as usize + 2;
        remaining.max(needed).max(5).min(self.long_horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MissionMode {
    LosTracking,
    /// Tracking the reflection off the wall cluster with this id.
    NlosTracking(usize),
    Exploring,
}

/// A wall cluster with an id that is stable across refits.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedWall {
    pub id: usize,
    pub wall: WallCluster,
}

/// Known-LOR filter, `x = [p, p_tx]` in the map frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NlosFilter {
    pub lor: LineOfReflection,
    pub state: FilterState,
}

/// Passive unknown-LOR filter, `x = [p - tx_hat, m, c]`. `origin` is the
/// LOS transponder estimate at initialization, which fixes the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct UnknownLorFilter {
    pub wall_id: usize,
    pub origin: Point,
    pub rotated: bool,
    pub state: FilterState,
}

/// Every filter the controller maintains.
#[derive(Debug, Clone)]
pub struct EkfBank {
    /// `x = p - p_tx`.
    pub los: Option<FilterState>,
    pub nlos: BTreeMap<usize, NlosFilter>,
    pub unknown: Option<UnknownLorFilter>,
    /// Moving average of the LOS innovation Mahalanobis distance.
    pub mahalanobis: Option<f64>,
    pub noise: NoiseConfig,
    ema_weight: f64,
    /// Updates rejected by the EKF (singular geometry, ill-conditioning).
    pub rejected: usize,
}

impl EkfBank {
    pub fn new(noise: NoiseConfig, gate_half_life: f64) -> Self {
        Self {
            los: None,
            nlos: BTreeMap::new(),
            unknown: None,
            mahalanobis: None,
            noise,
            ema_weight: 1.0 - libm::pow(0.5, 1.0 / gate_half_life),
            rejected: 0,
        }
    }

    pub fn los_model(&self) -> AoaModel {
        AoaModel::new(ModelVariant::Los, &self.noise)
    }

    pub fn nlos_model(&self, lor: &LineOfReflection) -> AoaModel {
        AoaModel::new(ModelVariant::NlosKnownLor { lor: *lor }, &self.noise)
    }

    /// Map-frame transponder estimate of the LOS filter.
    pub fn los_tx_estimate(&self, p: &Point) -> Option<Point> {
        self.los.as_ref().map(|fs| p - Point::new(fs.x[0], fs.x[1]))
    }

    pub fn gate_passed(&self, gate: f64) -> bool {
        self.mahalanobis.is_some_and(|m| m < gate)
    }

    /// Propagates every filter by the executed displacement `u` and applies
    /// `meas` to the filters it concerns: LOS measurements to the LOS
    /// filter, first-order NLOS measurements to the filter of the wall the
    /// AoA ray hits. Missing filters are initialized on the way.
    pub fn update(&mut self, p: &Point, u: &Point, meas: Option<&AoAMeasurement>, walls: &[MappedWall], cfg: &ControllerConfig) {
        let uv = DVector::from_column_slice(u.as_slice());
        let z = meas.map(|m| DVector::from_column_slice(m.unit.as_slice()));
        let order = meas.and_then(|m| m.link.order());

        let los_model = self.los_model();
        match self.los.take() {
            None => {
                if let (Some(m), Some(0)) = (meas, order) {
                    // the source is visible, so it sits before the first mapped wall on the ray
                    let clusters: Vec<WallCluster> = walls.iter().map(|w| w.wall.clone()).collect();
                    let r = match intersect_ray_lor(p, m.alpha, &clusters, 0.0) {
                        Some((_, hit)) => (0.5 * (hit - p).norm()).clamp(1.0, cfg.los_init_range),
                        None => cfg.los_init_range,
                    };
                    let x = -m.unit * r;
                    // range is unobserved from one bearing; the lateral spread follows the bearing noise
                    let lateral = r * libm::sin(self.noise.sigma_alpha.min(0.5));
                    let along = DMatrix::from_column_slice(2, 1, m.unit.as_slice());
                    let across = DMatrix::from_column_slice(2, 1, &[-m.unit.y, m.unit.x]);
                    let p0 = &along * along.transpose() * (r * r) + &across * across.transpose() * (lateral * lateral);
                    self.los = Some(FilterState {
                        x: DVector::from_column_slice(x.as_slice()),
                        p: p0,
                    });
                }
            }
            Some(fs) => {
                let zl = if order == Some(0) { z.as_ref() } else { None };
                match ekf_step(&los_model, &fs, &uv, zl) {
                    Ok((next, diag)) => {
                        if let Some(d) = diag {
                            let prev = self.mahalanobis.unwrap_or(d.mahalanobis);
                            self.mahalanobis = Some(prev + self.ema_weight * (d.mahalanobis - prev));
                        }
                        self.los = Some(next);
                    }
                    Err(_) => {
                        self.rejected += 1;
                        self.los = Some(fs);
                    }
                }
            }
        }

        let hit = match (meas, order) {
            (Some(m), Some(1)) => {
                let clusters: Vec<WallCluster> = walls.iter().map(|w| w.wall.clone()).collect();
                intersect_ray_lor(p, m.alpha, &clusters, cfg.wall_pad).map(|(i, h)| (walls[i].id, h))
            }
            _ => None,
        };
        let ids: Vec<usize> = self.nlos.keys().copied().collect();
        for id in ids {
            let f = &self.nlos[&id];
            let model = self.nlos_model(&f.lor);
            let zi = if hit.is_some_and(|(h, _)| h == id) { z.as_ref() } else { None };
            match ekf_step(&model, &f.state, &uv, zi) {
                Ok((next, _)) => self.nlos.get_mut(&id).expect("present").state = next,
                Err(_) => {
                    self.rejected += 1;
                    // keep the prediction at least; it never fails
                    let f = self.nlos.get_mut(&id).expect("present");
                    if let Ok((next, _)) = ekf_step(&model, &f.state, &uv, None) {
                        f.state = next;
                    }
                }
            }
        }
        if let (Some((id, h)), Some(m)) = (hit, meas) {
            if !self.nlos.contains_key(&id) {
                let lor = walls.iter().find(|w| w.id == id).expect("hit wall is mapped").wall.lor;
                let image = h + m.unit * cfg.nlos_init_beyond;
                let tx0 = reflect_across(&lor, &image);
                let x = DVector::from_column_slice(&[p.x, p.y, tx0.x, tx0.y]);
                let p0 = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 1.0, 25.0, 25.0]));
                self.nlos.insert(id, NlosFilter { lor, state: FilterState { x, p: p0 } });
            }
        }
        self.update_unknown(p, &uv, z.as_ref(), hit, walls);
    }

    fn update_unknown(&mut self, p: &Point, u: &DVector<f64>, z: Option<&DVector<f64>>, hit: Option<(usize, Point)>, walls: &[MappedWall]) {
        match self.unknown.take() {
            Some(f) => {
                let model = AoaModel::new(ModelVariant::NlosUnknownLor { rotated: f.rotated }, &self.noise);
                let zi = if hit.is_some_and(|(h, _)| h == f.wall_id) { z } else { None };
                match ekf_step(&model, &f.state, u, zi) {
                    Ok((state, _)) => self.unknown = Some(UnknownLorFilter { state, ..f }),
                    Err(_) => {
                        self.rejected += 1;
                        self.unknown = Some(f);
                    }
                }
            }
            None => {
                let (Some((id, _)), Some(los)) = (hit, self.los.as_ref()) else {
                    return;
                };
                let Some(w) = walls.iter().find(|w| w.id == id) else {
                    return;
                };
                let origin = p - Point::new(los.x[0], los.x[1]);
                let a = w.wall.lor.anchor() - origin;
                let Ok(lor) = LineOfReflection::through(&a, &(a + w.wall.lor.direction())) else {
                    return;
                };
                let mut x = DVector::zeros(4);
                x[0] = los.x[0];
                x[1] = los.x[1];
                x[2] = lor.m;
                x[3] = lor.c;
                let mut p0 = DMatrix::zeros(4, 4);
                p0.view_mut((0, 0), (2, 2)).copy_from(&los.p);
                p0[(2, 2)] = 0.01;
                p0[(3, 3)] = 1.0;
                self.unknown = Some(UnknownLorFilter {
                    wall_id: id,
                    origin,
                    rotated: lor.rotated,
                    state: FilterState { x, p: p0 },
                });
            }
        }
    }

    /// Drops filters of walls that no longer exist and moves the others to
    /// the refitted lines.
    pub fn sync_walls(&mut self, walls: &[MappedWall]) {
        self.nlos.retain(|id, _| walls.iter().any(|w| w.id == *id));
        for (id, f) in self.nlos.iter_mut() {
            f.lor = walls.iter().find(|w| w.id == *id).expect("retained").wall.lor;
        }
        if self.unknown.as_ref().is_some_and(|f| !walls.iter().any(|w| w.id == f.wall_id)) {
            self.unknown = None;
        }
    }

    pub fn len(&self) -> usize {
        self.los.is_some() as usize + self.nlos.len() + self.unknown.is_some() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mode for the current measurement: LOS tracking, tracking the reflection
/// off the first mapped wall on the AoA ray, or exploration.
pub fn select_mode(p: &Point, meas: Option<&AoAMeasurement>, walls: &[MappedWall], pad: f64) -> MissionMode {
    let Some(m) = meas else {
        return MissionMode::Exploring;
    };
    match m.link.order() {
        Some(0) => MissionMode::LosTracking,
        Some(1) => {
            let clusters: Vec<WallCluster> = walls.iter().map(|w| w.wall.clone()).collect();
            match intersect_ray_lor(p, m.alpha, &clusters, pad) {
                Some((i, _)) => MissionMode::NlosTracking(walls[i].id),
                None => MissionMode::Exploring,
            }
        }
        _ => MissionMode::Exploring,
    }
}

/// Map-frame goal for a tracking mode, or `None` when the needed filter
/// does not exist yet (the caller then explores).
///
/// LOS: the transponder estimate. NLOS: the reflection point predicted by
/// the wall's filter, moved `por_offset` toward its transponder estimate.
pub fn choose_goal(mode: &MissionMode, bank: &EkfBank, p: &Point, por_offset: f64) -> Option<Point> {
    match mode {
        MissionMode::LosTracking => bank.los_tx_estimate(p),
        MissionMode::NlosTracking(id) => {
            let f = bank.nlos.get(id)?;
            let pr = Point::new(f.state.x[0], f.state.x[1]);
            let tx = Point::new(f.state.x[2], f.state.x[3]);
            let por = first_order_por(&pr, &tx, &f.lor).ok()?;
            let d = tx - por;
            let n = d.norm();
            if n <= 0.0 {
                return Some(por);
            }
            Some(por + d * (por_offset.min(n) / n))
        }
        MissionMode::Exploring => None,
    }
}

/// Uniform sample inside `bounds` (shrunk by `margin`) that keeps `margin`
/// clearance from every circle. `None` after 1000 rejected draws.
pub fn explore_target<R: Rng + ?Sized>(bounds: &Bounds, circles: &[Circle], margin: f64, rng: &mut R) -> Option<Point> {
    let lo = bounds.min + Point::new(margin, margin);
    let hi = bounds.max - Point::new(margin, margin);
    if !(lo.x < hi.x && lo.y < hi.y) {
        return None;
    }
    for _ in 0..1000 {
        let q = Point::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
        if circles.iter().all(|c| (q - c.center).norm() > c.radius + margin) {
            return Some(q);
        }
    }
    None
}

/// A simulated planar range scan: `rays` evenly spaced beams, hits on walls
/// and obstacles within `range`, with Gaussian range noise.
pub fn range_scan<R: Rng + ?Sized>(env: &Environment, p: &Point, rays: usize, range: f64, std: f64, rng: &mut R) -> Vec<Point> {
    let mut out = Vec::new();
    for k in 0..rays {
        let dir = unit(2.0 * PI * k as f64 / rays as f64);
        let end = p + dir * range;
        let mut best = f64::INFINITY;
        for w in &env.walls {
            if let Some((t, s)) = line_params(p, &end, &w.a, &w.b) {
                if t > 0.0 && t <= 1.0 && (0.0..=1.0).contains(&s) {
                    best = best.min(t * range);
                }
            }
        }
        for c in &env.obstacles {
            // |p + t dir - c|^2 = r^2
            let f = p - c.center;
            let b = f.dot(&dir);
            let disc = b * b - (f.norm_squared() - c.radius * c.radius);
            if disc >= 0.0 {
                let t = -b - disc.sqrt();
                if t > 0.0 && t <= range {
                    best = best.min(t);
                }
            }
        }
        if best.is_finite() {
            let noise: f64 = StandardNormal.sample(rng);
            out.push(p + dir * (best + std * noise));
        }
    }
    out
}

/// Scan points de-duplicated on a grid.
#[derive(Debug, Clone, Default)]
struct Cloud {
    cells: BTreeMap<(i64, i64), Point>,
    resolution: f64,
}

impl Cloud {
    fn new(resolution: f64) -> Self {
        Self {
            cells: BTreeMap::new(),
            resolution,
        }
    }

    fn extend(&mut self, pts: &[Point]) {
        for q in pts {
            let key = (libm::floor(q.x / self.resolution) as i64, libm::floor(q.y / self.resolution) as i64);
            self.cells.entry(key).or_insert(*q);
        }
    }

    fn points(&self) -> Vec<Point> {
        self.cells.values().copied().collect()
    }
}

/// Re-clusters the scan points near `p`. Walls matching an old line keep
/// its id and the union of both extents. Old walls near `p` without a match
/// are invalidated; walls out of range are kept as they are.
fn refit_walls(points: &[Point], p: &Point, prev: &[MappedWall], next_id: &mut usize, cfg: &ControllerConfig) -> Vec<MappedWall> {
    let near: Vec<Point> = points.iter().filter(|q| (*q - p).norm() <= cfg.cluster_radius).copied().collect();
    let fresh = match PointCloud2D::new(near.clone()) {
        Ok(pc) if pc.len() >= 10 => cluster_walls(&pc, &cfg.map).unwrap_or_default(),
        _ => Vec::new(),
    };
    let old: Vec<WallCluster> = prev.iter().map(|w| w.wall.clone()).collect();
    let mut out: Vec<MappedWall> = Vec::new();
    let mut matched = vec![false; prev.len()];
    for mut w in fresh {
        let id = match match_lor(&w.lor, &old, cfg.map.merge_angle, 0.5) {
            Some(i) if !out.iter().any(|o| o.id == prev[i].id) => {
                matched[i] = true;
                let dir = w.lor.direction();
                let o = &prev[i].wall;
                let ts = [w.start, w.end, o.start, o.end].map(|q| (q - w.start).dot(&dir));
                let lo = ts.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let base = w.start;
                w.start = w.lor.project(&(base + dir * lo));
                w.end = w.lor.project(&(base + dir * hi));
                prev[i].id
            }
            _ => {
                *next_id += 1;
                *next_id - 1
            }
        };
        out.push(MappedWall { id, wall: w });
    }
    for (i, w) in prev.iter().enumerate() {
        if matched[i] {
            continue;
        }
        let mid = (w.wall.start + w.wall.end) * 0.5;
        if (mid - p).norm() > cfg.cluster_radius {
            out.push(w.clone());
        }
    }
    out.sort_by_key(|w| w.id);
    out
}

/// Per-cycle record of a mission.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CycleRecord {
    /// Position at the start of the cycle.
    pub p: Point,
    pub mode: MissionMode,
    /// Reported reflection order, `None` without signal.
    pub link_order: Option<usize>,
    /// Distance of the LOS transponder estimate from the truth.
    pub tx_error: Option<f64>,
    /// `[xx, xy, yy]` of the LOS filter covariance.
    pub tx_cov: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MissionResult {
    pub success: bool,
    /// Sum of the executed step lengths.
    pub path_length: f64,
    pub cycles: usize,
    /// True link state at the start position.
    pub initial_link: LinkState,
    pub trace: Vec<CycleRecord>,
    pub final_position: Point,
    pub final_tx_error: Option<f64>,
    pub plans: usize,
    /// Replans that failed or returned an infeasible plan.
    pub planner_failures: usize,
    /// Periods spent exploring because no plan was available.
    pub forced_explorations: usize,
    /// Steps that would have hit a wall or obstacle and were not executed.
    pub blocked_steps: usize,
    pub rejected_updates: usize,
    pub filters: usize,
}

impl MissionResult {
    pub fn modes(&self) -> Vec<MissionMode> {
        self.trace.iter().map(|c| c.mode).collect()
    }
}

/// A world, a start position and the sensing noise.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub env: Environment,
    pub start: Point,
    /// AoA noise std (rad).
    pub noise_sigma: f64,
    /// Link-state misclassification probability.
    pub p_mis: f64,
}

impl Scenario {
    pub fn new(env: Environment, start: Point, noise_sigma: f64) -> Self {
        Self {
            env,
            start,
            noise_sigma,
            p_mis: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.env.bounds.contains(&self.start) {
            return Err(Error::Config("start outside environment bounds".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(0.0..=1.0).contains(&self.p_mis) {
            return Err(Error::Config("noise sigma must be >= 0 and p_mis in [0, 1]".into()));
        }
        Ok(())
    }
}

struct Explorer {
    target: Option<Point>,
    since: usize,
    route: VecDeque<Point>,
}

impl Explorer {
    /// One step toward the current exploration target along a shortest
    /// route through the mapped free space.
    fn step<R: Rng + ?Sized>(&mut self, p: &Point, cycle: usize, bounds: &Bounds, circles: &[Circle], grid: &OccupancyGrid, cfg: &ControllerConfig, rng: &mut R) -> Point {
        let stale = cycle.saturating_sub(self.since) >= cfg.explore_patience;
        if self.target.is_none_or(|t| (t - p).norm() <= cfg.arrival_radius) || stale {
            self.target = None;
            self.route.clear();
            self.since = cycle;
            for _ in 0..10 {
                let Some(t) = explore_target(bounds, circles, cfg.r_rob, rng) else {
                    break;
                };
                if let Some(route) = grid.path(p, &t, |a, b| grid.segment_free(a, b)) {
                    self.target = Some(t);
                    self.route = route.into_iter().skip(1).collect();
                    break;
                }
            }
        } else if self.route.is_empty() {
            let t = self.target.expect("checked above");
            self.route = match grid.path(p, &t, |a, b| grid.segment_free(a, b)) {
                Some(route) => route.into_iter().skip(1).collect(),
                None => [t].into_iter().collect(),
            };
        }
        while self.route.front().is_some_and(|w| (w - p).norm() <= 1e-6) {
            self.route.pop_front();
        }
        match self.route.front() {
            Some(w) => clip(&(w - p), cfg.u_max),
            None => Point::zeros(),
        }
    }
}

/// Scales `u` into the box `|u_i| <= u_max`.
fn clip(u: &Point, u_max: f64) -> Point {
    let m = u.amax();
    if m > u_max {
        u * (u_max / m)
    } else {
        *u
    }
}

fn chacha(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const START_CLEARANCE: f64 = 0.05;
const MIN_RADIUS: f64 = 0.05;

struct Leg<'a, M: EstimationModel> {
    model: &'a M,
    b0: BeliefState,
    goal: Point,
    /// Map-frame position of the planning-frame origin.
    origin: Point,
    t: f64,
    horizon: usize,
}

fn plan_leg<M: EstimationModel>(leg: Leg<'_, M>, circles: &[Circle], warm: &VecDeque<Point>, route: Option<&[Point]>, cfg: &ControllerConfig) -> Option<Vec<Point>> {
    let start = leg.b0.position();
    let n = leg.horizon;
    let reach = n as f64 * cfg.u_max * core::f64::consts::SQRT_2 + cfg.r_rob;
    let obstacles: Vec<Circle> = circles
        .iter()
        .filter_map(|c| {
            let center = c.center - leg.origin;
            let d = (center - start).norm();
            // circles the robot already overlaps are shrunk to leave it a feasible start
            let radius = c.radius.min(d - cfg.r_rob - START_CLEARANCE);
            (d <= reach + c.radius && radius >= MIN_RADIUS).then_some(Circle { center, radius })
        })
        .collect();
    let l = leg.b0.dim();
    let problem = PlanningProblem {
        b0: leg.b0,
        goal: leg.goal,
        weights: CostWeights::isotropic(l, cfg.q_n, cfg.r, leg.t),
        obstacles: ObstacleSet::new(obstacles, cfg.r_rob, cfg.n_std).ok()?,
        u_lo: Vector2::new(-cfg.u_max, -cfg.u_max),
        u_hi: Vector2::new(cfg.u_max, cfg.u_max),
        horizon: n,
    };
    let straight = problem.straight_line_controls();
    let mut inits: Vec<Vec<DVector<f64>>> = Vec::new();
    if !warm.is_empty() {
        inits.push(
            (0..n)
                .map(|i| match warm.get(i) {
                    Some(u) => DVector::from_column_slice(u.as_slice()),
                    None => straight[i].clone(),
                })
                .collect(),
        );
    }
    inits.push(match route {
        Some(r) if r.len() > 2 => route_controls(r, n, cfg.u_max),
        _ => straight,
    });
    let mut best: Option<(f64, Vec<Point>)> = None;
    for init in inits {
        let Ok(sol) = solve_from(leg.model, &problem, &cfg.solver, Some(&init)) else {
            continue;
        };
        if sol.max_constraint_violation <= cfg.accept_violation && best.as_ref().is_none_or(|(c, _)| sol.total_cost < *c) {
            best = Some((sol.total_cost, sol.controls.iter().map(|u| Point::new(u[0], u[1])).collect()));
        }
    }
    best.map(|(_, us)| us)
}

/// Resamples a polyline into `n` equal steps no longer than `u_max`,
/// padding with zero controls once the end is reached.
fn route_controls(route: &[Point], n: usize, u_max: f64) -> Vec<DVector<f64>> {
    let total: f64 = route.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let step = (total / n as f64).min(u_max);
    let at = |s: f64| {
        let mut s = s;
        for w in route.windows(2) {
            let len = (w[1] - w[0]).norm();
            if s <= len && len > 0.0 {
                return w[0] + (w[1] - w[0]) * (s / len);
            }
            s -= len;
        }
        *route.last().expect("non-empty route")
    };
    (0..n)
        .map(|k| {
            let u = at((k + 1) as f64 * step) - at(k as f64 * step);
            DVector::from_column_slice(u.as_slice())
        })
        .collect()
}
/// Runs one mission until arrival or `max_cycles`.
///
/// Every cycle: sense (ray-traced AoA with noise, range scan), update the
/// filters, on replan boundaries rebuild the map and pick mode, goal and
/// plan, then execute one control. A step that would cross a wall or enter
/// an obstacle is not executed.
pub fn run_mission(scenario: &Scenario, cfg: &ControllerConfig, seed: u64) -> Result<MissionResult> {
    cfg.validate()?;
    scenario.validate()?;
    let env = &scenario.env;
    let mut rng_meas = chacha(seed, 1);
    let mut rng_scan = chacha(seed, 2);
    let mut rng_explore = chacha(seed, 3);

    let mut p = scenario.start;
    let mut bank = EkfBank::new(cfg.filter_noise(scenario.noise_sigma), cfg.gate_half_life);
    let mut cloud = Cloud::new(cfg.cloud_resolution);
    let mut walls: Vec<MappedWall> = Vec::new();
    let mut next_id = 0;
    let mut circles: Vec<Circle> = Vec::new();
    let mut plan: VecDeque<Point> = VecDeque::new();
    let mut tail_used = false;
    let mut mode = MissionMode::Exploring;
    let mut explorer = Explorer {
        target: None,
        since: 0,
        route: VecDeque::new(),
    };
    let mut grid = OccupancyGrid::from_circles(&env.bounds, &[], cfg.r_rob, 0.25);
    let mut explore_until = 0;
    let mut blocked_run = 0;
    let mut u_prev = Point::zeros();
    let mut leg_mode: Option<MissionMode> = None;
    let mut leg_deadline = 0;

    let oracle: Option<Vec<Point>> = match cfg.strategy {
        Strategy::KnownTx => shortest_path(env, &p, &env.tx, cfg.r_rob, 0.25),
        _ => None,
    };
    let mut oracle_next = 1;

    let initial_link = trace_signal(env, &p)?.map_or(LinkState::NoSignal, |m| m.link);
    let mut result = MissionResult {
        success: false,
        path_length: 0.0,
        cycles: 0,
        initial_link,
        trace: Vec::new(),
        final_position: p,
        final_tx_error: None,
        plans: 0,
        planner_failures: 0,
        forced_explorations: 0,
        blocked_steps: 0,
        rejected_updates: 0,
        filters: 0,
    };

    for cycle in 0..cfg.max_cycles {
        if (p - env.tx).norm() <= cfg.arrival_radius {
            result.success = true;
            break;
        }
        let meas = trace_signal(env, &p)?.map(|m| corrupt_measurement(&m, scenario.noise_sigma, scenario.p_mis, &mut rng_meas));
        let scan = range_scan(env, &p, cfg.sensor_rays, cfg.sensor_range, cfg.sensor_std, &mut rng_scan);
        cloud.extend(&scan);
        let boundary = cycle % cfg.replan_period == 0;
        if boundary {
            let pts = cloud.points();
            circles = match cover_with_circles(&pts, cfg.cover_cell, cfg.cover_margin) {
                Ok(c) => c.circles,
                Err(_) => Vec::new(),
            };
            grid = OccupancyGrid::from_circles(&env.bounds, &circles, cfg.r_rob, 0.25);
            explorer.route.clear();
        }

        let u = match cfg.strategy {
            Strategy::Ekf => {
                if boundary {
                    walls = refit_walls(&cloud.points(), &p, &walls, &mut next_id, cfg);
                    bank.sync_walls(&walls);
                }
                bank.update(&p, &u_prev, meas.as_ref(), &walls, cfg);
                if boundary {
                    let mut m = select_mode(&p, meas.as_ref(), &walls, cfg.wall_pad);
                    let goal = choose_goal(&m, &bank, &p, cfg.por_offset);
                    match (m, goal) {
                        (MissionMode::Exploring, _) => plan.clear(),
                        (_, None) => {
                            m = MissionMode::Exploring;
                            plan.clear();
                        }
                        (_, Some(goal)) => {
                            result.plans += 1;
                            if m != mode {
                                // a tail planned for another mode is neither a warm start nor a fallback
                                plan.clear();
                            }
                            // a leg keeps its arrival deadline across replans, so
                            // the slack for detours is spent only once
                            let d = (goal - p).norm();
                            if leg_mode != Some(m) {
                                leg_mode = Some(m);
                                leg_deadline = cycle + cfg.horizon_for(d);
                            }
                            let horizon = cfg.replan_horizon(leg_deadline.saturating_sub(cycle), d);
                            let fresh = match m {
                                MissionMode::LosTracking => {
                                    let fs = bank.los.as_ref().expect("goal implies filter");
                                    let t = if bank.gate_passed(cfg.mahalanobis_gate) { cfg.t_low } else { cfg.t_high };
                                    let model = bank.los_model();
                                    let x = Point::new(fs.x[0], fs.x[1]);
                                    // stop short of the estimate: the LOS model is singular there
                                    let goal_rel = if x.norm() > 0.5 { x.normalize() * 0.5 } else { x };
                                    let route = grid.path(&p, &(goal + goal_rel), |a, b| grid.segment_free(a, b));
                                    let leg = Leg {
                                        model: &model,
                                        b0: BeliefState {
                                            mean: fs.x.clone(),
                                            cov: fs.p.clone(),
                                        },
                                        goal: goal_rel,
                                        origin: goal,
                                        t,
                                        horizon,
                                    };
                                    plan_leg(leg, &circles, &plan, route.as_deref(), cfg)
                                }
                                MissionMode::NlosTracking(id) => {
                                    let f = &bank.nlos[&id];
                                    let model = bank.nlos_model(&f.lor);
                                    let route = grid.path(&p, &goal, |a, b| grid.segment_free(a, b));
                                    let leg = Leg {
                                        model: &model,
                                        b0: BeliefState {
                                            mean: f.state.x.clone(),
                                            cov: f.state.p.clone(),
                                        },
                                        goal,
                                        origin: Point::zeros(),
                                        t: cfg.t_high,
                                        horizon,
                                    };
                                    plan_leg(leg, &circles, &plan, route.as_deref(), cfg)
                                }
                                MissionMode::Exploring => unreachable!(),
                            };
                            match fresh {
                                Some(us) => {
                                    plan = us.into();
                                    tail_used = false;
                                }
                                None => {
                                    result.planner_failures += 1;
                                    if tail_used || plan.is_empty() {
                                        result.forced_explorations += 1;
                                        m = MissionMode::Exploring;
                                        plan.clear();
                                    } else {
                                        tail_used = true;
                                    }
                                }
                            }
                        }
                    }
                    if m == MissionMode::Exploring {
                        leg_mode = None;
                    }
                    mode = m;
                }
                match plan.pop_front() {
                    Some(u) if mode != MissionMode::Exploring && blocked_run < 2 => u,
                    _ => {
                        plan.clear();
                        explorer.step(&p, cycle, &env.bounds, &circles, &grid, cfg, &mut rng_explore)
                    }
                }
            }
            Strategy::AoaFollower => {
                let step = if cycle < explore_until {
                    None
                } else {
                    meas.as_ref().and_then(|m| aoa_follower_step(m, cfg.u_max))
                };
                match (step, meas.as_ref().and_then(|m| m.link.order())) {
                    (Some(u), Some(0)) => {
                        mode = MissionMode::LosTracking;
                        u
                    }
                    (Some(u), _) => {
                        mode = MissionMode::NlosTracking(UNKNOWN_WALL);
                        u
                    }
                    (None, _) => {
                        mode = MissionMode::Exploring;
                        explorer.step(&p, cycle, &env.bounds, &circles, &grid, cfg, &mut rng_explore)
                    }
                }
            }
            Strategy::KnownTx => {
                mode = MissionMode::LosTracking;
                match &oracle {
                    Some(path) => {
                        while oracle_next + 1 < path.len() && (path[oracle_next] - p).norm() <= 1e-9 {
                            oracle_next += 1;
                        }
                        let target = path[oracle_next.min(path.len() - 1)];
                        let d = target - p;
                        let mut len = d.norm().min(cfg.u_max);
                        if oracle_next + 1 >= path.len() {
                            // stop right inside the arrival radius
                            len = len.min(d.norm() - cfg.arrival_radius * (1.0 - 1e-9)).max(0.0);
                        }
                        if d.norm() > 0.0 {
                            d * (len / d.norm())
                        } else {
                            Point::zeros()
                        }
                    }
                    None => Point::zeros(),
                }
            }
        };

        let u = clip(&u, cfg.u_max);
        let (tx_error, tx_cov) = match (&bank.los, bank.los_tx_estimate(&p)) {
            (Some(fs), Some(est)) => (Some((est - env.tx).norm()), Some([fs.p[(0, 0)], fs.p[(0, 1)], fs.p[(1, 1)]])),
            _ => (None, None),
        };
        result.trace.push(CycleRecord {
            p,
            mode,
            link_order: meas.as_ref().and_then(|m| m.link.order()),
            tx_error,
            tx_cov,
        });

        let next = p + u;
        if env.bounds.contains(&next) && env.segment_clear(&p, &next) {
            result.path_length += u.norm();
            u_prev = u;
            p = next;
            blocked_run = 0;
        } else {
            result.blocked_steps += 1;
            u_prev = Point::zeros();
            blocked_run += 1;
            if cfg.strategy == Strategy::AoaFollower && blocked_run >= 2 {
                explore_until = cycle + cfg.replan_period;
                blocked_run = 0;
            }
            explorer.target = None;
        }
        result.cycles = cycle + 1;
    }
    if (p - env.tx).norm() <= cfg.arrival_radius {
        result.success = true;
    }
    result.final_position = p;
    result.final_tx_error = bank.los_tx_estimate(&p).map(|e| (e - env.tx).norm());
    result.rejected_updates = bank.rejected;
    result.filters = bank.len();
    Ok(result)
}
