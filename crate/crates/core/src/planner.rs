//! Belief-space trajectory optimization.
//!
//! The planner state is `z = [mean; vec(P)]`. Under the maximum-likelihood
//! observation assumption the mean follows the process model and the
//! covariance follows the EKF covariance update, linearized at the predicted
//! mean. The resulting deterministic optimal control problem
//!
//! ```text
//! min  sum_t u'Ru + tr(P_t T) + (p_N - p_d)' Q_N (p_N - p_d) + tr(P_N T_N)
//! s.t. z_{t+1} = g(z_t, u_t),  u_lo <= u_t <= u_hi,
//!      -|p_{t+1} - c_k| + r_rob + r_k + n_std * maxeig(P_pp,t+1) <= 0
//! ```
//!
//! is solved with an infeasible-start primal-dual interior-point DDP: every
//! inequality gets a slack `s >= 0` and a dual `y >= 0`, the complementarity
//! `y s = mu` is driven to zero on a geometric schedule, and a filter on
//! (barrier cost, constraint residual) accepts forward-pass steps. Only first
//! derivatives of the dynamics and constraints are used. `P_pp` is the
//! robot-position block of the covariance (the first two state entries).

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector4};
#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use crate::ekf::{self, linearize};
use crate::geometry::Point;
use crate::models::EstimationModel;
use crate::world::Circle;
use crate::{Error, Result};

/// Estimator mean and covariance, the planner's state.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl BeliefState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let l = mean.len();
        if l < 2 || cov.shape() != (l, l) {
            return Err(Error::Shape("belief covariance does not match the mean".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `[mean; vec(P)]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let l = self.dim();
        let mut z = DVector::zeros(l + l * l);
        z.rows_mut(0, l).copy_from(&self.mean);
        z.rows_mut(l, l * l).copy_from_slice(self.cov.as_slice());
        z
    }

    pub fn from_vector(z: &DVector<f64>, l: usize) -> Result<Self> {
        if z.len() != l + l * l {
            return Err(Error::Shape("belief vector has the wrong length".into()));
        }
        Ok(Self {
            mean: z.rows(0, l).into_owned(),
            cov: DMatrix::from_column_slice(l, l, &z.as_slice()[l..]),
        })
    }

    /// First two mean entries.
    pub fn position(&self) -> Point {
        Point::new(self.mean[0], self.mean[1])
    }

    /// Robot-position block of the covariance.
    pub fn position_cov(&self) -> Matrix2<f64> {
        Matrix2::new(self.cov[(0, 0)], self.cov[(0, 1)], self.cov[(1, 0)], self.cov[(1, 1)])
    }
}

/// One belief step: mean through the process model, covariance through the
/// EKF update with zero innovation.
pub fn belief_propagate<M: EstimationModel + ?Sized>(model: &M, b: &BeliefState, u: &DVector<f64>) -> Result<BeliefState> {
    let (mean, cov) = ekf::covariance_update(model, &b.mean, &b.cov, u)?;
    Ok(BeliefState { mean, cov })
}

/// Belief step together with `dz'/dz` and `dz'/du`.
pub fn belief_step_with_jacobians<M: EstimationModel + ?Sized>(
    model: &M,
    b: &BeliefState,
    u: &DVector<f64>,
) -> Result<(BeliefState, DMatrix<f64>, DMatrix<f64>)> {
    let l = b.dim();
    let n = l + l * l;
    let nu = model.control_dim();
    let (mean, cov, g) = linearize(model, &b.mean, &b.cov, u)?;
    let f = model.transition_jacobian(&b.mean, u);
    let bu = model.control_jacobian(&b.mean, u);
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (l, l)).copy_from(&f);
    a.view_mut((l, 0), (l * l, l)).copy_from(&g.dp_dx);
    a.view_mut((l, l), (l * l, l * l)).copy_from(&g.dp_dp);
    let mut bz = DMatrix::zeros(n, nu);
    bz.view_mut((0, 0), (l, nu)).copy_from(&bu);
    bz.view_mut((l, 0), (l * l, nu)).copy_from(&g.dp_du);
    Ok((BeliefState { mean, cov }, a, bz))
}

/// `(dz'/dz, dz'/du)` with block structure `[F 0; dP/dx dP/dP]`, `[B; dP/du]`.
pub fn belief_jacobians<M: EstimationModel + ?Sized>(
    model: &M,
    b: &BeliefState,
    u: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    belief_step_with_jacobians(model, b, u).map(|(_, a, bz)| (a, bz))
}

/// Diagonal cost weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    /// 2 x 2, on the terminal position error.
    pub q_n: Matrix2<f64>,
    /// 2 x 2, on the controls.
    pub r: Matrix2<f64>,
    /// l x l, on the running covariance.
    pub t_run: DMatrix<f64>,
    /// l x l, on the terminal covariance.
    pub t_term: DMatrix<f64>,
}

impl CostWeights {
    /// `Q_N = q_n I`, `R = r I`, `T_run = T_term = t I`.
    pub fn isotropic(l: usize, q_n: f64, r: f64, t: f64) -> Self {
        Self {
            q_n: Matrix2::identity() * q_n,
            r: Matrix2::identity() * r,
            t_run: DMatrix::identity(l, l) * t,
            t_term: DMatrix::identity(l, l) * t,
        }
    }

    pub fn validate(&self, l: usize) -> Result<()> {
        let diag2 = |m: &Matrix2<f64>| m[(0, 1)] == 0.0 && m[(1, 0)] == 0.0;
        let diag = |m: &DMatrix<f64>| (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0));
        if !diag2(&self.q_n) || !diag2(&self.r) || !diag(&self.t_run) || !diag(&self.t_term) {
            return Err(Error::Config("cost weights must be diagonal".into()));
        }
        if self.t_run.shape() != (l, l) || self.t_term.shape() != (l, l) {
            return Err(Error::Shape("covariance weights do not match the state".into()));
        }
        let nonneg = self.q_n.diagonal().iter().all(|&v| v >= 0.0)
            && self.t_run.diagonal().iter().all(|&v| v >= 0.0)
            && self.t_term.diagonal().iter().all(|&v| v >= 0.0);
        if !nonneg || self.r.diagonal().iter().any(|&v| v <= 0.0) {
            return Err(Error::Config("Q_N, T must be PSD and R positive definite".into()));
        }
        Ok(())
    }
}

pub fn stage_cost(b: &BeliefState, u: &DVector<f64>, w: &CostWeights) -> f64 {
    let u2 = Vector2::new(u[0], u[1]);
    (u2.transpose() * w.r * u2)[(0, 0)] + (&b.cov * &w.t_run).trace()
}

pub fn terminal_cost(b: &BeliefState, p_d: &Point, w: &CostWeights) -> f64 {
    let e = b.position() - p_d;
    (e.transpose() * w.q_n * e)[(0, 0)] + (&b.cov * &w.t_term).trace()
}

/// Circular obstacles with the robot radius and the confidence multiplier.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObstacleSet {
    pub obstacles: Vec<Circle>,
    pub r_rob: f64,
    pub n_std: f64,
}

impl ObstacleSet {
    pub fn new(obstacles: Vec<Circle>, r_rob: f64, n_std: f64) -> Result<Self> {
        if obstacles.iter().any(|c| !(c.radius > 0.0)) || !(r_rob >= 0.0) || !(n_std >= 0.0) {
            return Err(Error::Config("obstacle radii must be positive and n_std non-negative".into()));
        }
        Ok(Self { obstacles, r_rob, n_std })
    }

    pub fn empty() -> Self {
        Self {
            obstacles: Vec::new(),
            r_rob: 0.0,
            n_std: 3.0,
        }
    }

    pub fn len(&self) -> usize {
        self.obstacles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }
}

/// Largest eigenvalue of a (symmetrized) 2 x 2 matrix and its unit
/// eigenvector. For a repeated eigenvalue the lexicographically largest
/// choice `(1, 0)` is returned.
pub fn max_eig2(m: &Matrix2<f64>) -> (f64, Vector2<f64>) {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let half = 0.5 * (a - d);
    let rad = (half * half + b * b).sqrt();
    let lambda = 0.5 * (a + d) + rad;
    if rad <= 1e-14 * (a.abs() + d.abs()).max(1e-300) {
        return (lambda, Vector2::new(1.0, 0.0));
    }
    // pick the better conditioned of the two equivalent forms
    let v = if a >= d {
        Vector2::new(lambda - d, b)
    } else {
        Vector2::new(b, lambda - a)
    };
    let mut v = v.normalize();
    if v.x < 0.0 || (v.x == 0.0 && v.y < 0.0) {
        v = -v;
    }
    (lambda, v)
}

/// Chance-constraint values, one per obstacle (`<= 0` is safe).
pub fn obstacle_constraint(b: &BeliefState, obs: &ObstacleSet) -> Vec<f64> {
    let p = b.position();
    let (lam, _) = max_eig2(&b.position_cov());
    obs.obstacles
        .iter()
        .map(|c| -(p - c.center).norm() + obs.r_rob + c.radius + obs.n_std * lam)
        .collect()
}

/// Value and gradient of one obstacle constraint with respect to
/// `[mean; vec(P)]`, returned sparsely as the mean-position part and the
/// `P_pp` part.
pub fn obstacle_constraint_gradient(b: &BeliefState, c: &Circle, obs: &ObstacleSet) -> (f64, Vector2<f64>, Matrix2<f64>) {
    let p = b.position();
    let (lam, v) = max_eig2(&b.position_cov());
    let diff = p - c.center;
    let d = diff.norm();
    let value = -d + obs.r_rob + c.radius + obs.n_std * lam;
    let g_mean = if d > 0.0 { -diff / d } else { Vector2::new(-1.0, 0.0) };
    (value, g_mean, v * v.transpose() * obs.n_std)
}

/// Dense version of [`obstacle_constraint_gradient`] over the full belief
/// vector.
pub fn obstacle_constraint_gradient_dense(b: &BeliefState, c: &Circle, obs: &ObstacleSet) -> (f64, DVector<f64>) {
    let l = b.dim();
    let (v, gm, gp) = obstacle_constraint_gradient(b, c, obs);
    let mut g = DVector::zeros(l + l * l);
    g[0] = gm.x;
    g[1] = gm.y;
    for j in 0..2 {
        for i in 0..2 {
            g[l + i + j * l] = gp[(i, j)];
        }
    }
    (v, g)
}

/// Solver settings; the defaults are the ones used throughout.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SolverSettings {
    pub max_iter: usize,
    /// Optimality tolerance on the KKT residual at `mu_min`.
    pub tol: f64,
    pub mu0: f64,
    pub mu_factor: f64,
    pub mu_min: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    /// Converged solutions must satisfy every constraint to this level.
    pub max_violation: f64,
    /// Wall-clock budget in seconds (only enforced with `std`).
    pub time_limit: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 400,
            tol: 1e-3,
            mu0: 1.0,
            mu_factor: 0.2,
            mu_min: 1e-6,
            reg_init: 1e-8,
            reg_min: 1e-8,
            reg_max: 1e8,
            max_violation: 1e-4,
            time_limit: None,
        }
    }
}

/// Output of [`solve`].
#[derive(Debug, Clone)]
pub struct TrajectorySolution {
    /// `N + 1` beliefs.
    pub states: Vec<BeliefState>,
    /// `N` controls.
    pub controls: Vec<DVector<f64>>,
    pub total_cost: f64,
    pub max_constraint_violation: f64,
    /// Obstacle constraint values at states `1..=N`.
    pub obstacle_values: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Seconds; zero without `std`.
    pub wall_time: f64,
}

impl TrajectorySolution {
    /// Sum of the robot-position covariance traces over states `1..=N`.
    pub fn position_trace_sum(&self) -> f64 {
        self.states.iter().skip(1).map(|b| b.position_cov().trace()).sum()
    }
}

/// Everything that defines one planning problem.
#[derive(Debug, Clone)]
pub struct PlanningProblem {
    pub b0: BeliefState,
    /// Desired final position, in the same frame as the mean.
    pub goal: Point,
    pub weights: CostWeights,
    pub obstacles: ObstacleSet,
    pub u_lo: Vector2<f64>,
    pub u_hi: Vector2<f64>,
    pub horizon: usize,
}

impl PlanningProblem {
    fn validate<M: EstimationModel + ?Sized>(&self, model: &M) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::Config("horizon must be at least 2".into()));
        }
        if model.control_dim() != 2 || model.state_dim() != self.b0.dim() {
            return Err(Error::Shape("belief does not match the model".into()));
        }
        if (0..2).any(|i| !(self.u_lo[i] < self.u_hi[i])) {
            return Err(Error::Config("control bounds must satisfy u_lo < u_hi".into()));
        }
        self.weights.validate(self.b0.dim())
    }

    /// Straight-line controls toward the goal, shrunk strictly inside the
    /// bounds.
    pub fn straight_line_controls(&self) -> Vec<DVector<f64>> {
        let d = (self.goal - self.b0.position()) / self.horizon as f64;
        let mut scale: f64 = 1.0;
        for i in 0..2 {
            let lim = if d[i] >= 0.0 { self.u_hi[i] } else { self.u_lo[i] };
            let mid = 0.5 * (self.u_lo[i] + self.u_hi[i]);
            // keep 5% of the half-width as margin
            let margin = 0.05 * (self.u_hi[i] - self.u_lo[i]) * 0.5;
            let room = (lim - mid).abs() - margin;
            let want = (d[i] - mid).abs();
            if want > room {
                scale = scale.min(room / want);
            }
        }
        let mid = (self.u_lo + self.u_hi) * 0.5;
        let u = mid + (d - mid) * scale;
        vec![DVector::from_column_slice(u.as_slice()); self.horizon]
    }
    /// Straight-line controls plus a lateral excursion: `k` steps to one side
    /// of the start-goal line, then `k` steps back. `side` is +1 (left) or -1.
    pub fn detour_controls(&self, k: usize, side: f64) -> Vec<DVector<f64>> {
        let base = self.straight_line_controls();
        let d = self.goal - self.b0.position();
        let n = if d.norm() > 0.0 {
            Vector2::new(-d.y, d.x) / d.norm()
        } else {
            Vector2::new(0.0, 1.0)
        };
        let reach = (self.u_hi - self.u_lo).amax() * 0.5;
        base.into_iter()
            .enumerate()
            .map(|(i, mut u)| {
                let s = if i < k {
                    side
                } else if i < 2 * k {
                    -side
                } else {
                    0.0
                };
                u[0] += n.x * reach * s;
                u[1] += n.y * reach * s;
                u
            })
            .collect()
    }
}

/// Linearized stage. Each obstacle row of the constraint Jacobian is
/// `[gm_k; gp]' * fx[ROWS, :]`, since the constraint only reads the mean
/// position and `P_pp` of the next belief. The covariance part `gp` is shared
/// by all obstacles. The bound rows are `[I; -I]` in `u`.
struct Stage {
    fx: DMatrix<f64>,
    fu: DMatrix<f64>,
    /// `[u - u_hi; u_lo - u; phi_k(z_{t+1})]`
    c: DVector<f64>,
    gm: Vec<Vector2<f64>>,
    gp: Vector4<f64>,
    fxr: DMatrix<f64>,
    fur: DMatrix<f64>,
}

impl Stage {
    /// Obstacle rows applied to a vector over the six read entries.
    fn obstacle_apply(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        let shared = self.gp.x * v[2] + self.gp.y * v[3] + self.gp.z * v[4] + self.gp.w * v[5];
        for (k, gm) in self.gm.iter().enumerate() {
            out[4 + k] = gm.x * v[0] + gm.y * v[1] + shared;
        }
    }
}

struct Trajectory {
    xs: Vec<BeliefState>,
    us: Vec<DVector<f64>>,
    ss: Vec<DVector<f64>>,
    ys: Vec<DVector<f64>>,
}

/// Feedforward and feedback terms. The slack/dual feedback matrices are
/// kept factored: `Ks dx = -w`, `Ky dx = sy * w` with
/// `w = [kk dx; -kk dx; g_k' e dx]` and `g_k` the obstacle rows.
struct Gains {
    k: Vec<DVector<f64>>,
    kk: Vec<DMatrix<f64>>,
    ks: Vec<DVector<f64>>,
    ky: Vec<DVector<f64>>,
    e: Vec<DMatrix<f64>>,
    sy: Vec<DVector<f64>>,
}

/// Entries of `z = [mean; vec(P)]` read by the obstacle constraints.
fn constraint_rows(l: usize) -> [usize; 6] {
    [0, 1, l, l + 1, 2 * l, 2 * l + 1]
}

/// Values, mean gradients and the shared covariance gradient (over the
/// `P_pp` entries of [`constraint_rows`]) of every obstacle constraint.
fn obstacle_rows(b: &BeliefState, obs: &ObstacleSet) -> (Vec<f64>, Vec<Vector2<f64>>, Vector4<f64>) {
    let p = b.position();
    let (lam, v) = max_eig2(&b.position_cov());
    let vv = v * v.transpose() * obs.n_std;
    let mut values = Vec::with_capacity(obs.len());
    let mut grads = Vec::with_capacity(obs.len());
    for c in &obs.obstacles {
        let diff = p - c.center;
        let d = diff.norm();
        values.push(-d + obs.r_rob + c.radius + obs.n_std * lam);
        grads.push(if d > 0.0 { -diff / d } else { Vector2::new(-1.0, 0.0) });
    }
    (values, grads, Vector4::new(vv[(0, 0)], vv[(1, 0)], vv[(0, 1)], vv[(1, 1)]))
}

/// Stage constraint values `[u - u_hi; u_lo - u; phi_k(z_{t+1})]`.
fn stage_constraints(problem: &PlanningProblem, u: &DVector<f64>, next: &BeliefState) -> DVector<f64> {
    let mut c = DVector::zeros(4 + problem.obstacles.len());
    for i in 0..2 {
        c[i] = u[i] - problem.u_hi[i];
        c[2 + i] = problem.u_lo[i] - u[i];
    }
    for (k, v) in obstacle_constraint(next, &problem.obstacles).into_iter().enumerate() {
        c[4 + k] = v;
    }
    c
}

fn linearize_stage<M: EstimationModel + ?Sized>(model: &M, problem: &PlanningProblem, b: &BeliefState, u: &DVector<f64>) -> Result<Stage> {
    let (next, fx, fu) = belief_step_with_jacobians(model, b, u)?;
    let rows = constraint_rows(next.dim());
    let fxr = DMatrix::from_fn(6, fx.ncols(), |i, j| fx[(rows[i], j)]);
    let fur = DMatrix::from_fn(6, fu.ncols(), |i, j| fu[(rows[i], j)]);
    let (values, gm, gp) = obstacle_rows(&next, &problem.obstacles);
    let mut c = DVector::zeros(4 + values.len());
    for i in 0..2 {
        c[i] = u[i] - problem.u_hi[i];
        c[2 + i] = problem.u_lo[i] - u[i];
    }
    for (k, v) in values.into_iter().enumerate() {
        c[4 + k] = v;
    }
    Ok(Stage { fx, fu, c, gm, gp, fxr, fur })
}

fn rollout<M: EstimationModel + ?Sized>(model: &M, b0: &BeliefState, us: &[DVector<f64>]) -> Result<Vec<BeliefState>> {
    let mut xs = Vec::with_capacity(us.len() + 1);
    xs.push(b0.clone());
    for u in us {
        let next = belief_propagate(model, &xs[xs.len() - 1], u)?;
        xs.push(next);
    }
    Ok(xs)
}

fn total_cost(problem: &PlanningProblem, xs: &[BeliefState], us: &[DVector<f64>]) -> f64 {
    let w = &problem.weights;
    let run: f64 = xs.iter().zip(us).map(|(x, u)| stage_cost(x, u, w)).sum();
    run + terminal_cost(&xs[xs.len() - 1], &problem.goal, w)
}

/// Gradient of the stage cost w.r.t. `z` (the Hessian is zero) and of the
/// terminal cost (gradient, Hessian).
fn cost_gradients(problem: &PlanningProblem, x: &BeliefState, terminal: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
    let l = x.dim();
    let n = l + l * l;
    let w = &problem.weights;
    let t = if terminal { &w.t_term } else { &w.t_run };
    let mut g = DVector::zeros(n);
    // d tr(P T) / d vec(P) = vec(T') = vec(T)
    g.rows_mut(l, l * l).copy_from_slice(t.as_slice());
    if !terminal {
        return (g, None);
    }
    let e = x.position() - problem.goal;
    let ge = 2.0 * w.q_n * e;
    g[0] += ge.x;
    g[1] += ge.y;
    let mut h = DMatrix::zeros(n, n);
    h.view_mut((0, 0), (2, 2)).copy_from(&(2.0 * w.q_n));
    (g, Some(h))
}

#[cfg(feature = "std")]
struct Clock(std::time::Instant);
#[cfg(feature = "std")]
impl Clock {
    fn start() -> Self {
        Clock(std::time::Instant::now())
    }
    fn elapsed(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
#[cfg(not(feature = "std"))]
struct Clock;
#[cfg(not(feature = "std"))]
impl Clock {
    fn start() -> Self {
        Clock
    }
    fn elapsed(&self) -> f64 {
        0.0
    }
}

/// Solves the problem from the straight-line initialization.
pub fn solve<M: EstimationModel + ?Sized>(model: &M, problem: &PlanningProblem, settings: &SolverSettings) -> Result<TrajectorySolution> {
    solve_from(model, problem, settings, None)
}

/// Solves from the straight line and from lateral detours to both sides,
/// keeping the cheapest feasible result.
///
/// Covariance-weighted problems are strongly nonconvex: the local solver stays
/// in the homotopy class of its initialization, and detours that gain
/// information are often not reachable from the straight line.
pub fn solve_multistart<M: EstimationModel + ?Sized>(
    model: &M,
    problem: &PlanningProblem,
    settings: &SolverSettings,
) -> Result<TrajectorySolution> {
    let mut best = solve(model, problem, settings)?;
    let mut wall = best.wall_time;
    let n = problem.horizon;
    for frac in [0.2, 0.3, 0.4, 0.5] {
        let k = ((n as f64) * frac) as usize;
        for side in [1.0, -1.0] {
            let sol = solve_from(model, problem, settings, Some(&problem.detour_controls(k, side)))?;
            wall += sol.wall_time;
            let ok = |s: &TrajectorySolution| s.max_constraint_violation <= settings.max_violation;
            let better = match (ok(&sol), ok(&best)) {
                (true, false) => true,
                (false, true) => false,
                _ => sol.total_cost < best.total_cost,
            };
            if better {
                best = sol;
            }
        }
    }
    best.wall_time = wall;
    Ok(best)
}

/// Solves the problem, optionally warm-started from `init` controls (which
/// are clipped strictly inside the bounds).
pub fn solve_from<M: EstimationModel + ?Sized>(
    model: &M,
    problem: &PlanningProblem,
    settings: &SolverSettings,
    init: Option<&[DVector<f64>]>,
) -> Result<TrajectorySolution> {
    problem.validate(model)?;
    let clock = Clock::start();
    let n_steps = problem.horizon;
    let us: Vec<DVector<f64>> = match init {
        Some(init) if init.len() == n_steps => init.iter().map(|u| clip_inside(problem, u)).collect(),
        _ => problem.straight_line_controls(),
    };
    let xs = rollout(model, &problem.b0, &us)?;

    // slacks and duals
    let mut mu = settings.mu0;
    let mut ss = Vec::with_capacity(n_steps);
    let mut ys = Vec::with_capacity(n_steps);
    for t in 0..n_steps {
        let c = stage_constraints(problem, &us[t], &xs[t + 1]);
        let s = c.map(|v| (-v).max(1e-2));
        let y = s.map(|v| mu / v);
        ss.push(s);
        ys.push(y);
    }
    let mut traj = Trajectory { xs, us, ss, ys };
    let mut reg = settings.reg_init;
    let mut iterations = 0;
    let mut converged = false;
    let mut stages = linearize_all(model, problem, &traj)?;
    let (mut filter_cost, mut filter_theta) = merit(problem, &traj, stages.iter().map(|st| &st.c), mu);

    while iterations < settings.max_iter {
        if let Some(limit) = settings.time_limit {
            if clock.elapsed() > limit {
                break;
            }
        }
        iterations += 1;

        // backward pass with regularization retries
        let (gains, opt_err) = loop {
            match backward_pass(problem, &traj, &stages, reg, mu) {
                Some(res) => break res,
                None => {
                    reg *= 2.0;
                    if reg > settings.reg_max {
                        return Ok(finish(model, problem, traj, iterations, false, settings.max_violation, &clock));
                    }
                }
            }
        };

        let violation = primal_violation(&stages);
        if mu <= settings.mu_min && opt_err <= settings.tol && violation <= settings.max_violation {
            converged = true;
            break;
        }
        if opt_err <= 0.2 * mu.max(settings.tol) && mu > settings.mu_min {
            mu = (settings.mu_factor * mu).min(mu.powf(1.2)).max(settings.mu_min);
            let m = merit(problem, &traj, stages.iter().map(|st| &st.c), mu);
            filter_cost = m.0;
            filter_theta = m.1;
            continue;
        }

        // forward pass
        let tau = (1.0 - mu).max(0.99);
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..12 {
            if let Some(cand) = forward_pass(model, problem, &traj, &stages, &gains, alpha, tau) {
                let cs: Vec<DVector<f64>> = (0..n_steps).map(|t| stage_constraints(problem, &cand.us[t], &cand.xs[t + 1])).collect();
                let (cost, theta) = merit(problem, &cand, cs.iter(), mu);
                if cost.is_finite() && (cost < filter_cost || theta < filter_theta) {
                    if let Ok(cstages) = linearize_all(model, problem, &cand) {
                        accepted = Some((cand, cstages, cost, theta));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((cand, cstages, cost, theta)) => {
                traj = cand;
                stages = cstages;
                filter_cost = cost;
                filter_theta = theta;
                reg = (reg * 0.5).max(settings.reg_min);
            }
            None => {
                reg = (reg * 2.0).max(1e-6);
                if reg > settings.reg_max {
                    break;
                }
            }
        }
    }
    Ok(finish(model, problem, traj, iterations, converged, settings.max_violation, &clock))
}

fn clip_inside(problem: &PlanningProblem, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(2, |i, _| {
        let margin = 1e-3 * (problem.u_hi[i] - problem.u_lo[i]);
        u[i].clamp(problem.u_lo[i] + margin, problem.u_hi[i] - margin)
    })
}

fn linearize_all<M: EstimationModel + ?Sized>(model: &M, problem: &PlanningProblem, traj: &Trajectory) -> Result<Vec<Stage>> {
    (0..traj.us.len()).map(|t| linearize_stage(model, problem, &traj.xs[t], &traj.us[t])).collect()
}

/// Barrier cost and primal residual `sum |c + s|`.
fn merit<'a>(problem: &PlanningProblem, traj: &Trajectory, cs: impl Iterator<Item = &'a DVector<f64>>, mu: f64) -> (f64, f64) {
    let mut cost = total_cost(problem, &traj.xs, &traj.us);
    let mut theta = 0.0;
    for (c, s) in cs.zip(&traj.ss) {
        for (cv, sv) in c.iter().zip(s.iter()) {
            cost -= mu * sv.ln();
            theta += (cv + sv).abs();
        }
    }
    (cost, theta)
}

fn primal_violation(stages: &[Stage]) -> f64 {
    stages.iter().flat_map(|st| st.c.iter().copied()).fold(0.0, f64::max)
}

fn backward_pass(problem: &PlanningProblem, traj: &Trajectory, stages: &[Stage], reg: f64, mu: f64) -> Option<(Gains, f64)> {
    let n_steps = traj.us.len();
    let (vx_t, vxx_t) = cost_gradients(problem, &traj.xs[n_steps], true);
    let mut vx = vx_t;
    let mut vxx = vxx_t.expect("terminal Hessian");
    let mut gains = Gains {
        k: vec![DVector::zeros(0); n_steps],
        kk: vec![DMatrix::zeros(0, 0); n_steps],
        ks: vec![DVector::zeros(0); n_steps],
        ky: vec![DVector::zeros(0); n_steps],
        e: vec![DMatrix::zeros(0, 0); n_steps],
        sy: vec![DVector::zeros(0); n_steps],
    };
    let mut opt_err: f64 = 0.0;
    let r2 = problem.weights.r * 2.0;
    for t in (0..n_steps).rev() {
        let st = &stages[t];
        let (s, y) = (&traj.ss[t], &traj.ys[t]);
        let u = &traj.us[t];
        let (lx, _) = cost_gradients(problem, &traj.xs[t], false);
        let lu = DVector::from_column_slice((r2 * Vector2::new(u[0], u[1])).as_slice());

        // primal and complementarity residuals
        let m = st.c.len();
        let mut rp = DVector::zeros(m);
        let mut r_hat = DVector::zeros(m);
        let mut sy = DVector::zeros(m);
        let mut sr = DVector::zeros(m);
        for i in 0..m {
            rp[i] = st.c[i] + s[i];
            let rd = y[i] * s[i] - mu;
            r_hat[i] = y[i] * rp[i] - rd;
            sy[i] = y[i] / s[i];
            sr[i] = r_hat[i] / s[i];
            opt_err = opt_err.max(rp[i].abs()).max(rd.abs());
        }

        // obstacle rows reduced to the six entries they read
        let (mut gmy, mut gmsr) = (Vector2::zeros(), Vector2::zeros());
        let (mut ysum, mut srsum, mut sysum) = (0.0, 0.0, 0.0);
        let mut gmsy = Vector2::<f64>::zeros();
        let mut mm = Matrix2::<f64>::zeros();
        for (k, gm) in st.gm.iter().enumerate() {
            let (yk, srk, syk) = (y[4 + k], sr[4 + k], sy[4 + k]);
            gmy += gm * yk;
            gmsr += gm * srk;
            gmsy += gm * syk;
            mm += gm * gm.transpose() * syk;
            ysum += yk;
            srsum += srk;
            sysum += syk;
        }
        let stack = |a: Vector2<f64>, b: Vector4<f64>| DVector::from_vec(vec![a.x, a.y, b.x, b.y, b.z, b.w]);
        let gy = stack(gmy, st.gp * ysum);
        let gsr = stack(gmsr, st.gp * srsum);
        let mut mo = DMatrix::<f64>::zeros(6, 6);
        let cross_mp = gmsy * st.gp.transpose();
        let pp = st.gp * st.gp.transpose() * sysum;
        for a in 0..2 {
            for b in 0..2 {
                mo[(a, b)] = mm[(a, b)];
            }
            for b in 0..4 {
                mo[(a, 2 + b)] = cross_mp[(a, b)];
                mo[(2 + b, a)] = cross_mp[(a, b)];
            }
        }
        for a in 0..4 {
            for b in 0..4 {
                mo[(2 + a, 2 + b)] = pp[(a, b)];
            }
        }
        let bound = |v: &DVector<f64>| DVector::from_vec(vec![v[0] - v[2], v[1] - v[3]]);

        let vxx_fx = &vxx * &st.fx;
        let qx = lx + st.fx.transpose() * &vx + st.fxr.transpose() * &gy;
        let qu = lu + st.fu.transpose() * &vx + bound(y) + st.fur.transpose() * &gy;
        let qxx = st.fx.transpose() * &vxx_fx;
        let qux = st.fu.transpose() * &vxx_fx;
        let mut quu = st.fu.transpose() * &vxx * &st.fu;
        for i in 0..2 {
            for j in 0..2 {
                quu[(i, j)] += r2[(i, j)];
            }
        }

        let mo_fxr = &mo * &st.fxr;
        let qu_hat = &qu + bound(&sr) + st.fur.transpose() * &gsr;
        let qx_hat = &qx + st.fxr.transpose() * &gsr;
        let mut quu_hat = &quu + st.fur.transpose() * &mo * &st.fur;
        quu_hat[(0, 0)] += sy[0] + sy[2];
        quu_hat[(1, 1)] += sy[1] + sy[3];
        let qux_hat = &qux + st.fur.transpose() * &mo_fxr;
        let qxx_hat = &qxx + st.fxr.transpose() * &mo_fxr;

        opt_err = opt_err.max(qu.amax());

        for i in 0..2 {
            quu_hat[(i, i)] += reg;
        }
        let quu_hat = (&quu_hat + quu_hat.transpose()) * 0.5;
        let chol = quu_hat.clone().cholesky()?;
        let k = -chol.solve(&qu_hat);
        let kk = -chol.solve(&qux_hat);

        // cu k over all constraint rows
        let fur_k = &st.fur * &k;
        let mut cu_k = DVector::zeros(m);
        cu_k[0] = k[0];
        cu_k[1] = k[1];
        cu_k[2] = -k[0];
        cu_k[3] = -k[1];
        st.obstacle_apply(&fur_k, &mut cu_k);
        let mut ks = DVector::zeros(m);
        let mut ky = DVector::zeros(m);
        for i in 0..m {
            ks[i] = -rp[i] - cu_k[i];
            ky[i] = (r_hat[i] + y[i] * cu_k[i]) / s[i];
        }
        let e = &st.fxr + &st.fur * &kk;

        let quu_k = &quu_hat * &k;
        vx = &qx_hat + kk.transpose() * &quu_k + kk.transpose() * &qu_hat + qux_hat.transpose() * &k;
        let cross = kk.transpose() * &qux_hat;
        vxx = &qxx_hat + kk.transpose() * &quu_hat * &kk + &cross + cross.transpose();
        vxx = (&vxx + vxx.transpose()) * 0.5;

        gains.k[t] = k;
        gains.kk[t] = kk;
        gains.ks[t] = ks;
        gains.ky[t] = ky;
        gains.e[t] = e;
        gains.sy[t] = sy;
    }
    Some((gains, opt_err))
}

fn forward_pass<M: EstimationModel + ?Sized>(
    model: &M,
    problem: &PlanningProblem,
    traj: &Trajectory,
    stages: &[Stage],
    gains: &Gains,
    alpha: f64,
    tau: f64,
) -> Option<Trajectory> {
    let n_steps = traj.us.len();
    let mut xs = Vec::with_capacity(n_steps + 1);
    let mut us = Vec::with_capacity(n_steps);
    let mut ss = Vec::with_capacity(n_steps);
    let mut ys = Vec::with_capacity(n_steps);
    xs.push(problem.b0.clone());
    for t in 0..n_steps {
        let dx = xs[t].to_vector() - traj.xs[t].to_vector();
        let kdx = &gains.kk[t] * &dx;
        let edx = &gains.e[t] * &dx;
        let mut w = DVector::zeros(traj.ss[t].len());
        w[0] = kdx[0];
        w[1] = kdx[1];
        w[2] = -kdx[0];
        w[3] = -kdx[1];
        stages[t].obstacle_apply(&edx, &mut w);
        let (s0, y0) = (&traj.ss[t], &traj.ys[t]);
        let mut s = DVector::zeros(w.len());
        let mut y = DVector::zeros(w.len());
        for i in 0..w.len() {
            s[i] = s0[i] + gains.ks[t][i] * alpha - w[i];
            y[i] = y0[i] + gains.ky[t][i] * alpha + gains.sy[t][i] * w[i];
            // fraction to the boundary
            if s[i] < (1.0 - tau) * s0[i] || y[i] < (1.0 - tau) * y0[i] {
                return None;
            }
        }
        let u = &traj.us[t] + &gains.k[t] * alpha + kdx;
        let next = belief_propagate(model, &xs[t], &u).ok()?;
        if !next.mean.iter().chain(next.cov.iter()).all(|v| v.is_finite()) {
            return None;
        }
        xs.push(next);
        us.push(u);
        ss.push(s);
        ys.push(y);
    }
    Some(Trajectory { xs, us, ss, ys })
}

fn bound_violation(problem: &PlanningProblem, u: &DVector<f64>) -> f64 {
    (0..2)
        .map(|i| (u[i] - problem.u_hi[i]).max(problem.u_lo[i] - u[i]).max(0.0))
        .fold(0.0, f64::max)
}

fn finish<M: EstimationModel + ?Sized>(
    model: &M,
    problem: &PlanningProblem,
    traj: Trajectory,
    iterations: usize,
    converged: bool,
    max_violation: f64,
    clock: &Clock,
) -> TrajectorySolution {
    // interior-point iterates may sit marginally outside the bounds while the
    // primal residual is nonzero; return exactly admissible controls
    let clamped: Vec<DVector<f64>> = traj
        .us
        .iter()
        .map(|u| DVector::from_fn(2, |i, _| u[i].clamp(problem.u_lo[i], problem.u_hi[i])))
        .collect();
    let (xs, us) = match rollout(model, &problem.b0, &clamped) {
        Ok(xs) => (xs, clamped),
        Err(_) => (traj.xs, traj.us),
    };
    let obstacle_values: Vec<Vec<f64>> = xs.iter().skip(1).map(|x| obstacle_constraint(x, &problem.obstacles)).collect();
    let obstacle_max = obstacle_values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let bounds_max = us.iter().map(|u| bound_violation(problem, u)).fold(0.0, f64::max);
    let violation = obstacle_max.max(bounds_max).max(0.0);
    TrajectorySolution {
        total_cost: total_cost(problem, &xs, &us),
        max_constraint_violation: violation,
        obstacle_values,
        converged: converged && violation <= max_violation,
        states: xs,
        controls: us,
        iterations,
        wall_time: clock.elapsed(),
    }
}
