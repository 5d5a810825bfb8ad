//! Extended Kalman filter step, innovation gating and the analytic
//! derivatives of the covariance update.
//!
//! Conventions: `vec` stacks columns (nalgebra's storage order) and
//! derivatives are in numerator layout, so `dP_dx` has one column per state
//! entry. The covariance update used everywhere is
//!
//! ```text
//! P- = F P F' + W,  S = H P- H' + V,  K = P- H' S^-1,  P+ = P- - K H P-
//! ```
//!
//! with `H` evaluated at the predicted mean. Process Jacobians are treated as
//! state independent, which holds for every model in this crate.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use crate::models::EstimationModel;
use crate::{Error, Result};

/// Largest accepted condition number of the innovation covariance.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Estimate and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl FilterState {
    pub fn new(x: DVector<f64>, p: DMatrix<f64>) -> Result<Self> {
        let fs = Self { x, p };
        fs.validate()?;
        Ok(fs)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Checks shape, symmetry (1e-10, relative to the largest entry) and
    /// positive semi-definiteness (min eigenvalue >= -1e-10).
    pub fn validate(&self) -> Result<()> {
        let l = self.x.len();
        if self.p.shape() != (l, l) {
            return Err(Error::Shape(alloc::format!("covariance is {:?}, state has {l} entries", self.p.shape())));
        }
        let scale = self.p.amax().max(1.0);
        if (&self.p - self.p.transpose()).amax() > 1e-10 * scale {
            return Err(Error::Config("covariance is not symmetric".into()));
        }
        let min_eig = self.p.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-10 * scale {
            return Err(Error::Config(alloc::format!("covariance has eigenvalue {min_eig}")));
        }
        Ok(())
    }
}

/// Quantities from the measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDiagnostics {
    pub innovation: DVector<f64>,
    pub s: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    /// `sqrt(y' S^-1 y)`.
    pub mahalanobis: f64,
}

/// Derivatives of `vec(P+)` with respect to the previous mean, the previous
/// covariance (entry-wise, not symmetrized) and the control.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    /// `l^2 x l`.
    pub dp_dx: DMatrix<f64>,
    /// `l^2 x l^2`.
    pub dp_dp: DMatrix<f64>,
    /// `l^2 x m`.
    pub dp_du: DMatrix<f64>,
}

/// `S^-1` through a Cholesky factorization, refusing ill-conditioned `S`.
fn invert_innovation(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = s.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::IllConditioned { condition });
    }
    let chol = s.clone().cholesky().ok_or(Error::IllConditioned { condition })?;
    Ok(chol.inverse())
}

/// Like [`invert_innovation`] but through LU, so that `S` may carry the
/// asymmetric perturbations of a finite-difference probe.
fn invert_general(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::IllConditioned { condition });
    }
    s.clone().try_inverse().ok_or(Error::IllConditioned { condition })
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let t = p.transpose();
    *p += t;
    *p *= 0.5;
}

/// Predicted mean and covariance.
pub fn predict<M: EstimationModel + ?Sized>(model: &M, fs: &FilterState, u: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let f = model.transition_jacobian(&fs.x, u);
    let x = model.transition(&fs.x, u);
    let p = &f * &fs.p * f.transpose() + model.process_noise();
    (x, p)
}

/// One EKF predict + update. With `z = None`, or a model without
/// measurements, only the prediction is applied and no diagnostics are
/// returned.
pub fn ekf_step<M: EstimationModel + ?Sized>(
    model: &M,
    fs: &FilterState,
    u: &DVector<f64>,
    z: Option<&DVector<f64>>,
) -> Result<(FilterState, Option<UpdateDiagnostics>)> {
    if fs.x.len() != model.state_dim() || u.len() != model.control_dim() {
        return Err(Error::Shape("state or control does not match the model".into()));
    }
    let (x_pred, mut p_pred) = predict(model, fs, u);
    let z = match z {
        Some(z) if model.obs_dim() > 0 => z,
        _ => {
            symmetrize(&mut p_pred);
            return Ok((FilterState { x: x_pred, p: p_pred }, None));
        }
    };
    if z.len() != model.obs_dim() {
        return Err(Error::Shape("measurement has the wrong dimension".into()));
    }
    let h = model.observation_jacobian(&x_pred)?;
    let y = z - model.observe(&x_pred)?;
    let zeta = &p_pred * h.transpose();
    let s = &h * &zeta + model.measurement_noise();
    let s_inv = invert_innovation(&s)?;
    let k = &zeta * &s_inv;
    let x = &x_pred + &k * &y;
    let mut p = &p_pred - &k * zeta.transpose();
    symmetrize(&mut p);
    let m2 = (y.transpose() * &s_inv * &y)[(0, 0)];
    let diag = UpdateDiagnostics {
        mahalanobis: m2.max(0.0).sqrt(),
        innovation: y,
        s,
        gain: k,
    };
    Ok((FilterState { x, p }, Some(diag)))
}

/// Covariance update under the maximum-likelihood-observation assumption:
/// returns the predicted mean and `P+` linearized there. `P+` is left
/// unsymmetrized so that it is an exact function of every entry of `p`.
pub fn covariance_update<M: EstimationModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let f = model.transition_jacobian(x, u);
    let x_pred = model.transition(x, u);
    let p_pred = &f * p * f.transpose() + model.process_noise();
    if model.obs_dim() == 0 {
        return Ok((x_pred, p_pred));
    }
    let h = model.observation_jacobian(&x_pred)?;
    let zeta = &p_pred * h.transpose();
    let s = &h * &zeta + model.measurement_noise();
    let k = &zeta * invert_general(&s)?;
    let p_post = &p_pred - &k * (&h * &p_pred);
    Ok((x_pred, p_post))
}

/// Column-stacking vectorization.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`] for an `rows x cols` matrix.
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::Shape(alloc::format!("{} entries cannot fill {rows}x{cols}", v.len())));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v))
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Permutation `Pi` with `Pi vec(A) = vec(A')` for `A` of shape `m x n`.
pub fn commutation(m: usize, n: usize) -> DMatrix<f64> {
    let mut pi = DMatrix::zeros(m * n, m * n);
    for i in 0..m {
        for j in 0..n {
            pi[(j + i * n, i + j * m)] = 1.0;
        }
    }
    pi
}

/// Analytic derivatives of the covariance update.
///
/// Perturbing `H` gives `dP+ = -(K dH P+ + P+ dH' K')`, so with `dH` taken
/// along `F` (the predicted mean moves by `F dx`)
///
/// ```text
/// dvec(P+)/dx = -(P+ (x) K + (K (x) P+) Pi) * [vec(dH/dx_j)]_j * F
/// dvec(P+)/dvec(P) = (A F) (x) (A F),   A = I - K H
/// ```
///
/// The first line is evaluated column by column as matrix products, which
/// costs `O(r l^3)`; the Kronecker product of the second is the `O(l^4)` term.
pub fn covariance_gradients<M: EstimationModel + ?Sized>(
    model: &M,
    fs: &FilterState,
    u: &DVector<f64>,
) -> Result<GradientBundle> {
    linearize(model, &fs.x, &fs.p, u).map(|(_, _, g)| g)
}

/// Predicted mean, `P+` (as in [`covariance_update`]) and the analytic
/// gradients, sharing one factorization.
pub fn linearize<M: EstimationModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, GradientBundle)> {
    let l = model.state_dim();
    let nu = model.control_dim();
    let f = model.transition_jacobian(x, u);
    let b = model.control_jacobian(x, u);
    let x_pred = model.transition(x, u);
    let p_pred = &f * p * f.transpose() + model.process_noise();
    if model.obs_dim() == 0 {
        let g = GradientBundle {
            dp_dx: DMatrix::zeros(l * l, l),
            dp_dp: kron(&f, &f),
            dp_du: DMatrix::zeros(l * l, nu),
        };
        return Ok((x_pred, p_pred, g));
    }
    let h = model.observation_jacobian(&x_pred)?;
    let dh = model.observation_jacobian_derivative(&x_pred)?;
    let zeta = &p_pred * h.transpose();
    let s = &h * &zeta + model.measurement_noise();
    let k = &zeta * invert_general(&s)?;
    let p_post = &p_pred - &k * (&h * &p_pred);

    // dvec(P+) along a perturbation dH of the observation Jacobian
    let along = |d: &DMatrix<f64>| -> DVector<f64> {
        let kdp = &k * d * &p_post;
        -vec(&(&kdp + kdp.transpose()))
    };
    let direction = |coeffs: &[f64]| -> DMatrix<f64> {
        let mut d = DMatrix::zeros(h.nrows(), l);
        for (j, c) in coeffs.iter().enumerate() {
            if *c != 0.0 {
                d += &dh[j] * *c;
            }
        }
        d
    };
    let mut dp_dx = DMatrix::zeros(l * l, l);
    for col in 0..l {
        let coeffs: Vec<f64> = f.column(col).iter().copied().collect();
        dp_dx.set_column(col, &along(&direction(&coeffs)));
    }
    let mut dp_du = DMatrix::zeros(l * l, nu);
    for col in 0..nu {
        let coeffs: Vec<f64> = b.column(col).iter().copied().collect();
        dp_du.set_column(col, &along(&direction(&coeffs)));
    }
    let a = DMatrix::identity(l, l) - &k * &h;
    let af = a * &f;
    let g = GradientBundle {
        dp_dx,
        dp_dp: kron(&af, &af),
        dp_du,
    };
    Ok((x_pred, p_post, g))
}

/// The same derivatives by central differences of [`covariance_update`].
pub fn covariance_gradients_fd<M: EstimationModel + ?Sized>(
    model: &M,
    fs: &FilterState,
    u: &DVector<f64>,
    step: f64,
) -> Result<GradientBundle> {
    let l = model.state_dim();
    let nu = model.control_dim();
    let two_h = 2.0 * step;
    let mut dp_dx = DMatrix::zeros(l * l, l);
    for j in 0..l {
        let (mut xp, mut xm) = (fs.x.clone(), fs.x.clone());
        xp[j] += step;
        xm[j] -= step;
        let plus = covariance_update(model, &xp, &fs.p, u)?.1;
        let minus = covariance_update(model, &xm, &fs.p, u)?.1;
        dp_dx.set_column(j, &(vec(&(plus - minus)) / two_h));
    }
    let mut dp_dp = DMatrix::zeros(l * l, l * l);
    for j in 0..l * l {
        let (mut pp, mut pm) = (fs.p.clone(), fs.p.clone());
        pp[j] += step;
        pm[j] -= step;
        let plus = covariance_update(model, &fs.x, &pp, u)?.1;
        let minus = covariance_update(model, &fs.x, &pm, u)?.1;
        dp_dp.set_column(j, &(vec(&(plus - minus)) / two_h));
    }
    let mut dp_du = DMatrix::zeros(l * l, nu);
    for j in 0..nu {
        let (mut up, mut um) = (u.clone(), u.clone());
        up[j] += step;
        um[j] -= step;
        let plus = covariance_update(model, &fs.x, &fs.p, &up)?.1;
        let minus = covariance_update(model, &fs.x, &fs.p, &um)?.1;
        dp_du.set_column(j, &(vec(&(plus - minus)) / two_h));
    }
    Ok(GradientBundle { dp_dx, dp_dp, dp_du })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commutation_transposes() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let at = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(commutation(2, 2) * vec(&a), vec(&at));
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(commutation(2, 3) * vec(&b), vec(&b.transpose()));
        assert_eq!(kron(&DMatrix::identity(2, 2), &DMatrix::identity(2, 2)), DMatrix::identity(4, 4));
    }

    #[test]
    fn ill_conditioned_innovation_is_rejected() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![1.0, 1e-13]));
        assert!(matches!(invert_innovation(&s), Err(Error::IllConditioned { .. })));
    }
}
