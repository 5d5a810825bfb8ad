//! Small planar geometry helpers shared by the ray tracer and the map builder.

use core::f64::consts::PI;
use nalgebra::Vector2;
#[cfg(not(feature = "std"))]
use num_traits::Float as _;

/// A point or displacement in the plane, in meters.
pub type Point = Vector2<f64>;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// z-component of the cross product of two planar vectors.
#[inline]
pub fn cross(a: &Point, b: &Point) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Unit vector with angle `alpha`.
#[inline]
pub fn unit(alpha: f64) -> Point {
    Point::new(alpha.cos(), alpha.sin())
}

/// Intersection of segments `p0→p1` and `q0→q1`.
///
/// Returns `(t, s)` with the hit at `p0 + t (p1 - p0) = q0 + s (q1 - q0)`, or
/// `None` for parallel segments. The parameters are not clipped to `[0, 1]`.
pub fn line_params(p0: &Point, p1: &Point, q0: &Point, q1: &Point) -> Option<(f64, f64)> {
    let r = p1 - p0;
    let s = q1 - q0;
    let denom = cross(&r, &s);
    let scale = r.norm() * s.norm();
    if scale == 0.0 || denom.abs() <= 1e-14 * scale {
        return None;
    }
    let qp = q0 - p0;
    Some((cross(&qp, &s) / denom, cross(&qp, &r) / denom))
}

/// Mirror image of `q` across the infinite line through `a` and `b`.
pub fn reflect_point(q: &Point, a: &Point, b: &Point) -> Point {
    let d = (b - a).normalize();
    let v = q - a;
    let along = d * v.dot(&d);
    a + along * 2.0 - v
}

/// Signed side of `q` relative to the directed line `a→b` (positive on the left).
#[inline]
pub fn side(q: &Point, a: &Point, b: &Point) -> f64 {
    cross(&(b - a), &(q - a))
}

/// Distance from `q` to the closed segment `a→b`.
pub fn point_segment_distance(q: &Point, a: &Point, b: &Point) -> f64 {
    let d = b - a;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return (q - a).norm();
    }
    let t = ((q - a).dot(&d) / len2).clamp(0.0, 1.0);
    (a + d * t - q).norm()
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bounds {
    pub min: Point,
    pub max: Point,
}

impl Bounds {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn is_empty(&self) -> bool {
        !(self.max.x > self.min.x && self.max.y > self.min.y)
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}
