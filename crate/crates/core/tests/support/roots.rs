//! Scalar and small-system root finders used as geometry oracles.

use nalgebra::{Matrix2, Vector2};

/// Plain bisection; `f(lo)` and `f(hi)` must bracket a root.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    assert!(flo * f(hi) <= 0.0, "root not bracketed");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * (1.0 + lo.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Equal-angle residual at a candidate reflection point on `y = m x + c`.
pub fn equal_angle_residual(x: f64, p: Vector2<f64>, p_tx: Vector2<f64>, m: f64, c: f64) -> f64 {
    let pr = Vector2::new(x, m * x + c);
    let s = Vector2::new(1.0, m);
    let a = pr - p_tx;
    let b = pr - p;
    a.dot(&s) / a.norm() + b.dot(&s) / b.norm()
}

/// Reflection point on `y = m x + c` found by bisection between the feet of
/// the two end points.
pub fn bisection_por(p: Vector2<f64>, p_tx: Vector2<f64>, m: f64, c: f64) -> Vector2<f64> {
    let foot = |q: Vector2<f64>| (q.x + m * (q.y - c)) / (1.0 + m * m);
    let (a, b) = (foot(p), foot(p_tx));
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let x = bisect(|x| equal_angle_residual(x, p, p_tx, m, c), lo, hi);
    Vector2::new(x, m * x + c)
}

/// Newton's method with a central-difference Jacobian on a 2-variable system.
pub fn newton2(f: impl Fn(Vector2<f64>) -> Vector2<f64>, mut x: Vector2<f64>) -> Vector2<f64> {
    for _ in 0..100 {
        let fx = f(x);
        if fx.amax() < 1e-15 {
            break;
        }
        let h = 1e-7;
        let mut j = Matrix2::zeros();
        for k in 0..2 {
            let mut e = Vector2::zeros();
            e[k] = h;
            j.set_column(k, &((f(x + e) - f(x - e)) / (2.0 * h)));
        }
        let dx = j.lu().solve(&(-fx)).expect("singular Jacobian");
        x += dx;
        if dx.amax() < 1e-14 {
            break;
        }
    }
    x
}
