//! Process and observation models for the AoA filters.
//!
//! Every variant shares the same layout for the robot block: the first two
//! state entries are the robot position and the control moves them directly
//! (single integrator). Observations are unit vectors pointing from the robot
//! towards the apparent source.
//!
//! Lines of reflection use the slope/offset form `y = m x + c`. A line can
//! instead be expressed in a frame rotated by 90 degrees, where
//! `(x', y') = (y, -x)`, so near-vertical walls stay well conditioned.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix2};
#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use crate::dual::{Dual, Real};
use crate::geometry::Point;
use crate::{Error, Result};

/// Guard radius for every normalization, in meters.
pub const SINGULARITY_EPS: f64 = 1e-6;

/// Step of the central differences used for the NLOS Jacobian derivative.
pub const DH_STEP: f64 = 1e-6;

/// Slope beyond which a line is better represented in the rotated frame.
pub const MAX_SLOPE: f64 = 20.0;

/// Infinite line `y = m x + c`, optionally in the rotated frame.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LineOfReflection {
    pub m: f64,
    pub c: f64,
    /// `true` when `m` and `c` are expressed in the rotated frame.
    #[cfg_attr(feature = "serde", serde(default))]
    pub rotated: bool,
}

impl LineOfReflection {
    pub fn new(m: f64, c: f64) -> Self {
        Self { m, c, rotated: false }
    }

    pub fn new_rotated(m: f64, c: f64) -> Self {
        Self { m, c, rotated: true }
    }

    /// Line through two distinct points, switching to the rotated frame
    /// when the slope would exceed [`MAX_SLOPE`].
    pub fn through(a: &Point, b: &Point) -> Result<Self> {
        let d = b - a;
        if d.norm() <= SINGULARITY_EPS {
            return Err(Error::Degenerate("line through coincident points".into()));
        }
        if d.y.abs() <= MAX_SLOPE * d.x.abs() {
            let m = d.y / d.x;
            Ok(Self::new(m, a.y - m * a.x))
        } else {
            let (fa, fd) = (to_frame(a, true), to_frame(&d, true));
            let m = fd.y / fd.x;
            Ok(Self::new_rotated(m, fa.y - m * fa.x))
        }
    }

    /// Maps a global point into this line's frame.
    pub fn to_frame(&self, q: &Point) -> Point {
        to_frame(q, self.rotated)
    }

    /// Maps a point from this line's frame back to global coordinates.
    pub fn from_frame(&self, q: &Point) -> Point {
        from_frame(q, self.rotated)
    }

    /// Unit direction of the line in global coordinates.
    pub fn direction(&self) -> Point {
        self.from_frame(&Point::new(1.0, self.m)).normalize()
    }

    /// Some point on the line.
    pub fn anchor(&self) -> Point {
        self.from_frame(&Point::new(0.0, self.c))
    }

    /// Signed perpendicular distance, positive above the line in its frame.
    pub fn signed_distance(&self, q: &Point) -> f64 {
        let f = self.to_frame(q);
        (f.y - self.m * f.x - self.c) / libm::sqrt(1.0 + self.m * self.m)
    }

    /// Foot of the perpendicular from `q`.
    pub fn project(&self, q: &Point) -> Point {
        let d = self.direction();
        let a = self.anchor();
        a + d * (q - a).dot(&d)
    }

    /// Angle of the line direction in `(-pi/2, pi/2]`.
    pub fn angle(&self) -> f64 {
        let d = self.direction();
        let mut a = d.y.atan2(d.x);
        if a <= -core::f64::consts::FRAC_PI_2 {
            a += core::f64::consts::PI;
        } else if a > core::f64::consts::FRAC_PI_2 {
            a -= core::f64::consts::PI;
        }
        a
    }
}

fn to_frame(q: &Point, rotated: bool) -> Point {
    if rotated {
        Point::new(q.y, -q.x)
    } else {
        *q
    }
}

fn from_frame(q: &Point, rotated: bool) -> Point {
    if rotated {
        Point::new(-q.y, q.x)
    } else {
        *q
    }
}

// Generic geometry shared by the f64 and dual-number paths. Points are
// `[T; 2]`, lines are `(m, c, rotated)`.

type P2<T> = [T; 2];

#[derive(Clone, Copy)]
struct Lor<T> {
    m: T,
    c: T,
    rotated: bool,
}

impl<T: Real> Lor<T> {
    fn fixed(l: &LineOfReflection) -> Self {
        Self {
            m: T::cst(l.m),
            c: T::cst(l.c),
            rotated: l.rotated,
        }
    }

    fn to_frame(&self, q: P2<T>) -> P2<T> {
        if self.rotated {
            [q[1], -q[0]]
        } else {
            q
        }
    }

    fn from_frame(&self, q: P2<T>) -> P2<T> {
        if self.rotated {
            [-q[1], q[0]]
        } else {
            q
        }
    }

    /// `y - m x - c` in the line's frame.
    fn side(&self, q: P2<T>) -> T {
        let f = self.to_frame(q);
        f[1] - self.m * f[0] - self.c
    }

    fn reflect(&self, q: P2<T>) -> P2<T> {
        let f = self.to_frame(q);
        let two = T::cst(2.0);
        let d = (f[1] - self.m * f[0] - self.c) / (T::cst(1.0) + self.m * self.m);
        self.from_frame([f[0] + two * d * self.m, f[1] - two * d])
    }

    fn scale(&self) -> f64 {
        let m = self.m.val();
        libm::sqrt(1.0 + m * m)
    }
}

/// Reflection point on `lor` between the (possibly virtual) source `src`
/// and `p`, as the crossing of `reflect(src) -> p` with the line.
fn por_generic<T: Real>(p: P2<T>, src: P2<T>, lor: &Lor<T>) -> Result<P2<T>> {
    let sp = lor.side(p);
    let st = lor.side(src);
    let scale = lor.scale();
    if sp.val().abs() / scale <= SINGULARITY_EPS {
        return Err(Error::Degenerate("point lies on the line of reflection".into()));
    }
    if st.val().abs() / scale <= SINGULARITY_EPS {
        return Err(Error::Degenerate("source lies on the line of reflection".into()));
    }
    if sp.val() * st.val() < 0.0 {
        return Err(Error::Geometry("points on opposite sides of the line of reflection".into()));
    }
    let img = lor.reflect(src);
    let sum = sp + st;
    Ok([(sp * img[0] + st * p[0]) / sum, (sp * img[1] + st * p[1]) / sum])
}

fn nth_por_generic<T: Real>(p: P2<T>, p_tx: P2<T>, lors: &[Lor<T>]) -> Result<P2<T>> {
    let n = lors.len();
    if n == 0 {
        return Err(Error::Config("reflection chain needs at least one line".into()));
    }
    if n == 1 {
        return por_generic(p, p_tx, &lors[0]);
    }
    // images[k] = p_tx mirrored across lors[0..k]
    let mut images = Vec::with_capacity(n);
    images.push(p_tx);
    for l in &lors[..n - 1] {
        let last = images[images.len() - 1];
        images.push(l.reflect(last));
    }
    // back-trace the reflection points from the robot towards the source
    let mut points = vec![p];
    for k in (0..n).rev() {
        let next = points[points.len() - 1];
        points.push(por_generic(next, images[k], &lors[k])?);
    }
    points.push(p_tx);
    points.reverse();
    // points = [tx, r_1, .., r_n, p]; incoming and outgoing legs of every
    // reflection must stay on the same side of its line
    for k in 0..n {
        let a = lors[k].side(points[k]).val();
        let b = lors[k].side(points[k + 2]).val();
        if a * b <= 0.0 {
            return Err(Error::Geometry(alloc::format!("reflection {} is not specular", k + 1)));
        }
    }
    Ok(points[n])
}

fn direction_generic<T: Real>(from: P2<T>, to: P2<T>) -> Result<P2<T>> {
    let d = [to[0] - from[0], to[1] - from[1]];
    let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if r.val() <= SINGULARITY_EPS {
        return Err(Error::Singularity("robot at the apparent source".into()));
    }
    Ok([d[0] / r, d[1] / r])
}

fn p2(q: &Point) -> P2<f64> {
    [q.x, q.y]
}

fn pt(q: P2<f64>) -> Point {
    Point::new(q[0], q[1])
}

/// Mirror image of `q` across the line.
pub fn reflect_across(lor: &LineOfReflection, q: &Point) -> Point {
    pt(Lor::fixed(lor).reflect(p2(q)))
}

/// Reflection point on `lor` of the specular path from `p_tx` to `p`.
pub fn first_order_por(p: &Point, p_tx: &Point, lor: &LineOfReflection) -> Result<Point> {
    por_generic(p2(p), p2(p_tx), &Lor::fixed(lor)).map(pt)
}

/// Last reflection point of the path `p_tx -> lors[0] -> .. -> lors[n-1] -> p`.
pub fn nth_order_por(p: &Point, p_tx: &Point, lors: &[LineOfReflection]) -> Result<Point> {
    let ls: Vec<Lor<f64>> = lors.iter().map(Lor::fixed).collect();
    nth_por_generic(p2(p), p2(p_tx), &ls).map(pt)
}

/// LOS observation for the robot at `p` relative to the transponder.
pub fn los_observe(p: &Point) -> Result<Point> {
    let r = p.norm();
    if r <= SINGULARITY_EPS {
        return Err(Error::Singularity("robot at the transponder".into()));
    }
    Ok(-p / r)
}

pub fn los_jacobian(p: &Point) -> Result<Matrix2<f64>> {
    let r = p.norm();
    if r <= SINGULARITY_EPS {
        return Err(Error::Singularity("robot at the transponder".into()));
    }
    Ok(-(Matrix2::identity() / r - p * p.transpose() / (r * r * r)))
}

/// `[dH/dp_x, dH/dp_y]` for the LOS model.
pub fn los_jacobian_derivative(p: &Point) -> Result<[Matrix2<f64>; 2]> {
    let r = p.norm();
    if r <= SINGULARITY_EPS {
        return Err(Error::Singularity("robot at the transponder".into()));
    }
    let r3 = r * r * r;
    let r5 = r3 * r * r;
    let ppt = p * p.transpose();
    let mut out = [Matrix2::zeros(); 2];
    for (j, o) in out.iter_mut().enumerate() {
        let mut e = Point::zeros();
        e[j] = 1.0;
        *o = Matrix2::identity() * (p[j] / r3) + (e * p.transpose() + p * e.transpose()) / r3 - ppt * (3.0 * p[j] / r5);
    }
    Ok(out)
}

/// Which quantities are filter states for a given link situation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ModelVariant {
    /// `x = p`, robot relative to the transponder.
    Los,
    /// `x = [p, m, c]` with the transponder at the origin; `rotated` selects
    /// the frame of `m, c`.
    NlosUnknownLor { rotated: bool },
    /// `x = [p, p_tx]` in the map frame.
    NlosKnownLor { lor: LineOfReflection },
    /// `x = [p, p_tx]`, reflected by `lors` in order from the transponder.
    NlosNth { lors: Vec<LineOfReflection> },
}

impl ModelVariant {
    pub fn state_dim(&self) -> usize {
        match self {
            ModelVariant::Los => 2,
            _ => 4,
        }
    }

    /// Observation `h(x)`.
    pub fn observe(&self, x: &DVector<f64>) -> Result<Point> {
        self.check_dim(x)?;
        match self {
            ModelVariant::Los => los_observe(&Point::new(x[0], x[1])),
            _ => self.nlos_generic::<f64>([x[0], x[1], x[2], x[3]]).map(pt),
        }
    }

    /// `H = dh/dx`, 2 x l.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        match self {
            ModelVariant::Los => {
                let h = los_jacobian(&Point::new(x[0], x[1]))?;
                Ok(DMatrix::from_iterator(2, 2, h.iter().copied()))
            }
            _ => {
                let seeds = [0, 1, 2, 3].map(|i| Dual::<4>::var(x[i], i));
                let h = self.nlos_generic(seeds)?;
                Ok(DMatrix::from_fn(2, 4, |r, c| h[r].d[c]))
            }
        }
    }

    /// `dH/dx_j` for every state entry `j`, each 2 x l.
    pub fn jacobian_derivative(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_dim(x)?;
        match self {
            ModelVariant::Los => {
                let d = los_jacobian_derivative(&Point::new(x[0], x[1]))?;
                Ok(d.iter().map(|m| DMatrix::from_iterator(2, 2, m.iter().copied())).collect())
            }
            _ => {
                let l = x.len();
                let mut out = Vec::with_capacity(l);
                for j in 0..l {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += DH_STEP;
                    xm[j] -= DH_STEP;
                    out.push((self.jacobian(&xp)? - self.jacobian(&xm)?) / (2.0 * DH_STEP));
                }
                Ok(out)
            }
        }
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::Shape(alloc::format!(
                "state has {} entries, model expects {}",
                x.len(),
                self.state_dim()
            )));
        }
        Ok(())
    }

    fn nlos_generic<T: Real>(&self, x: [T; 4]) -> Result<P2<T>> {
        let p = [x[0], x[1]];
        let apparent = match self {
            ModelVariant::Los => unreachable!("LOS has a closed form"),
            ModelVariant::NlosUnknownLor { rotated } => {
                let lor = Lor {
                    m: x[2],
                    c: x[3],
                    rotated: *rotated,
                };
                por_generic(p, [T::cst(0.0), T::cst(0.0)], &lor)?
            }
            ModelVariant::NlosKnownLor { lor } => por_generic(p, [x[2], x[3]], &Lor::fixed(lor))?,
            ModelVariant::NlosNth { lors } => {
                let ls: Vec<Lor<T>> = lors.iter().map(Lor::fixed).collect();
                nth_por_generic(p, [x[2], x[3]], &ls)?
            }
        };
        direction_generic(p, apparent)
    }
}

/// Noise levels used to build `W` and `V`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct NoiseConfig {
    /// Process noise std on robot-position entries (m).
    pub robot_std: f64,
    /// Process noise std on static entries (transponder, line parameters).
    pub static_std: f64,
    /// AoA noise std (rad); the unit-vector noise std is `sin(sigma_alpha)`.
    pub sigma_alpha: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            robot_std: 0.01,
            static_std: 1e-4,
            sigma_alpha: 0.05,
        }
    }
}

impl NoiseConfig {
    pub fn process_noise(&self, l: usize) -> DMatrix<f64> {
        DMatrix::from_fn(l, l, |i, j| match (i == j, i < 2) {
            (true, true) => self.robot_std * self.robot_std,
            (true, false) => self.static_std * self.static_std,
            _ => 0.0,
        })
    }

    pub fn measurement_noise(&self) -> DMatrix<f64> {
        let s = self.sigma_alpha.sin();
        DMatrix::identity(2, 2) * (s * s)
    }
}

/// Everything the EKF and the planner need from a model.
///
/// `observation_jacobian_derivative` returns one `r x l` matrix per state
/// entry. Models with `obs_dim() == 0` never receive measurements.
pub trait EstimationModel {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn control_dim(&self) -> usize {
        2
    }
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `F = df/dx`.
    fn transition_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    /// `B = df/du`.
    fn control_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn observe(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn observation_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
    fn observation_jacobian_derivative(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>>;
    fn process_noise(&self) -> &DMatrix<f64>;
    fn measurement_noise(&self) -> &DMatrix<f64>;
}

/// Single-integrator robot block: `x' = x + B u` with `B = [I_2; 0]`.
pub fn integrator_transition(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut y = x.clone();
    y[0] += u[0];
    y[1] += u[1];
    y
}

pub fn integrator_control_matrix(l: usize) -> DMatrix<f64> {
    DMatrix::from_fn(l, 2, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// A [`ModelVariant`] with its noise covariances.
#[derive(Debug, Clone)]
pub struct AoaModel {
    pub variant: ModelVariant,
    w: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl AoaModel {
    pub fn new(variant: ModelVariant, noise: &NoiseConfig) -> Self {
        let l = variant.state_dim();
        Self {
            w: noise.process_noise(l),
            v: noise.measurement_noise(),
            variant,
        }
    }

    pub fn with_covariances(variant: ModelVariant, w: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        let l = variant.state_dim();
        if w.shape() != (l, l) || v.shape() != (2, 2) {
            return Err(Error::Shape("noise covariance shapes do not match the model".into()));
        }
        Ok(Self { variant, w, v })
    }
}

impl EstimationModel for AoaModel {
    fn state_dim(&self) -> usize {
        self.variant.state_dim()
    }
    fn obs_dim(&self) -> usize {
        2
    }
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        integrator_transition(x, u)
    }
    fn transition_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.state_dim(), self.state_dim())
    }
    fn control_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        integrator_control_matrix(self.state_dim())
    }
    fn observe(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let h = self.variant.observe(x)?;
        Ok(DVector::from_column_slice(h.as_slice()))
    }
    fn observation_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.variant.jacobian(x)
    }
    fn observation_jacobian_derivative(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.variant.jacobian_derivative(x)
    }
    fn process_noise(&self) -> &DMatrix<f64> {
        &self.w
    }
    fn measurement_noise(&self) -> &DMatrix<f64> {
        &self.v
    }
}

/// Linear-Gaussian model `x' = A x + B u`, `z = C x`. With a `0 x l` matrix
/// `C` it is a pure dead-reckoning model.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    w: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, w: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        let l = a.nrows();
        let r = c.nrows();
        if a.ncols() != l || b.nrows() != l || c.ncols() != l || w.shape() != (l, l) || v.shape() != (r, r) {
            return Err(Error::Shape("inconsistent linear model".into()));
        }
        Ok(Self { a, b, c, w, v })
    }

    /// Planar robot without any AoA measurement.
    pub fn dead_reckoning(robot_std: f64) -> Self {
        Self {
            a: DMatrix::identity(2, 2),
            b: DMatrix::identity(2, 2),
            c: DMatrix::zeros(0, 2),
            w: DMatrix::identity(2, 2) * (robot_std * robot_std),
            v: DMatrix::zeros(0, 0),
        }
    }
}

impl EstimationModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn obs_dim(&self) -> usize {
        self.c.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
    fn transition_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
    fn control_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.b.clone()
    }
    fn observe(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.c * x)
    }
    fn observation_jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.c.clone())
    }
    fn observation_jacobian_derivative(&self, _x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        Ok(vec![DMatrix::zeros(self.c.nrows(), self.c.ncols()); self.state_dim()])
    }
    fn process_noise(&self) -> &DMatrix<f64> {
        &self.w
    }
    fn measurement_noise(&self) -> &DMatrix<f64> {
        &self.v
    }
}

/// Smooth nonlinear model of arbitrary state dimension used for timing:
/// `x' = x + [I_2; 0] u`, `z_k = sum_j a_kj sin(x_j) + x_0 x_1 / 10`.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    a: DMatrix<f64>,
    w: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl SyntheticModel {
    pub fn new(l: usize) -> Result<Self> {
        if l < 2 {
            return Err(Error::Config("synthetic model needs l >= 2".into()));
        }
        let a = DMatrix::from_fn(2, l, |k, j| ((3 * k + 7 * j + 1) as f64 * 0.7).cos());
        Ok(Self {
            a,
            w: DMatrix::identity(l, l) * 1e-4,
            v: DMatrix::identity(2, 2) * 1e-2,
        })
    }
}

impl EstimationModel for SyntheticModel {
    fn state_dim(&self) -> usize {
        self.a.ncols()
    }
    fn obs_dim(&self) -> usize {
        2
    }
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        integrator_transition(x, u)
    }
    fn transition_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.state_dim(), self.state_dim())
    }
    fn control_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        integrator_control_matrix(self.state_dim())
    }
    fn observe(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let s = x.map(f64::sin);
        Ok(&self.a * s + DVector::from_element(2, x[0] * x[1] / 10.0))
    }
    fn observation_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut h = DMatrix::from_fn(2, x.len(), |k, j| self.a[(k, j)] * x[j].cos());
        for k in 0..2 {
            h[(k, 0)] += x[1] / 10.0;
            h[(k, 1)] += x[0] / 10.0;
        }
        Ok(h)
    }
    fn observation_jacobian_derivative(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        let l = x.len();
        Ok((0..l)
            .map(|j| {
                let mut d = DMatrix::zeros(2, l);
                for k in 0..2 {
                    d[(k, j)] = -self.a[(k, j)] * x[j].sin();
                    if j == 0 {
                        d[(k, 1)] += 0.1;
                    }
                    if j == 1 {
                        d[(k, 0)] += 0.1;
                    }
                }
                d
            })
            .collect())
    }
    fn process_noise(&self) -> &DMatrix<f64> {
        &self.w
    }
    fn measurement_noise(&self) -> &DMatrix<f64> {
        &self.v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Point, b: &Point, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn los_examples() {
        assert!(close(&los_observe(&Point::new(3.0, 4.0)).unwrap(), &Point::new(-0.6, -0.8), 1e-15));
        assert!(close(&los_observe(&Point::new(1.0, 0.0)).unwrap(), &Point::new(-1.0, 0.0), 1e-15));
        assert!(matches!(los_observe(&Point::new(1e-8, 0.0)), Err(Error::Singularity(_))));
        let h = los_jacobian(&Point::new(1.0, 0.0)).unwrap();
        assert_eq!(h, Matrix2::new(0.0, 0.0, 0.0, -1.0));
    }

    #[test]
    fn reflection_examples() {
        let q = reflect_across(&LineOfReflection::new(0.0, 0.0), &Point::new(1.0, 1.0));
        assert!(close(&q, &Point::new(1.0, -1.0), 1e-15));
        let q = reflect_across(&LineOfReflection::new(0.0, 100.0), &Point::new(0.0, 110.0));
        assert!(close(&q, &Point::new(0.0, 90.0), 1e-12));
        // vertical wall x = 3 in the rotated frame
        let v = LineOfReflection::through(&Point::new(3.0, 0.0), &Point::new(3.0, 5.0)).unwrap();
        assert!(v.rotated);
        assert!(close(&reflect_across(&v, &Point::new(1.0, 2.0)), &Point::new(5.0, 2.0), 1e-12));
    }

    #[test]
    fn symmetric_por() {
        let lor = LineOfReflection::new(0.0, 0.0);
        let r = first_order_por(&Point::new(1.0, 1.0), &Point::new(-1.0, 1.0), &lor).unwrap();
        assert!(close(&r, &Point::zeros(), 1e-15));
        let r = first_order_por(&Point::new(2.0, 1.0), &Point::new(-2.0, 1.0), &lor).unwrap();
        assert!(close(&r, &Point::zeros(), 1e-15));
        let err = first_order_por(&Point::new(2.0, 1.0), &Point::new(-2.0, -1.0), &lor);
        assert!(matches!(err, Err(Error::Geometry(_))));
        let err = first_order_por(&Point::new(2.0, 0.0), &Point::new(-2.0, 1.0), &lor);
        assert!(matches!(err, Err(Error::Degenerate(_))));
    }

    #[test]
    fn nlos_symmetric_observation() {
        let v = ModelVariant::NlosKnownLor {
            lor: LineOfReflection::new(0.0, 0.0),
        };
        let h = v.observe(&DVector::from_vec(vec![1.0, 1.0, -1.0, 1.0])).unwrap();
        let s = -core::f64::consts::FRAC_1_SQRT_2;
        assert!(close(&h, &Point::new(s, s), 1e-15));
    }

    #[test]
    fn transitions() {
        let u = DVector::from_vec(vec![1.0, 2.0]);
        let m = AoaModel::new(ModelVariant::Los, &NoiseConfig::default());
        assert_eq!(m.transition(&DVector::zeros(2), &u).as_slice(), &[1.0, 2.0]);
        let m = AoaModel::new(
            ModelVariant::NlosKnownLor {
                lor: LineOfReflection::new(0.0, 0.0),
            },
            &NoiseConfig::default(),
        );
        let x = DVector::from_vec(vec![1.0, 1.0, 5.0, 5.0]);
        let u = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(m.transition(&x, &u).as_slice(), &[2.0, 1.0, 5.0, 5.0]);
        let m = AoaModel::new(ModelVariant::NlosUnknownLor { rotated: false }, &NoiseConfig::default());
        let x = DVector::from_vec(vec![1.0, 1.0, 0.3, -2.0]);
        let y = m.transition(&x, &DVector::from_vec(vec![-4.0, 9.0]));
        assert_eq!((y[2], y[3]), (0.3, -2.0));
    }

    #[test]
    fn noise_defaults() {
        let n = NoiseConfig::default();
        let w = n.process_noise(4);
        assert!((w[(0, 0)] - 1e-4).abs() < 1e-18 && (w[(3, 3)] - 1e-8).abs() < 1e-20);
        assert!((n.measurement_noise()[(1, 1)] - 0.05f64.sin().powi(2)).abs() < 1e-18);
    }
}
