//! Wall point generators with ground-truth labels, and the sampling spread of
//! a total-least-squares line fit.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

type P = Vector2<f64>;

/// Points uniform along the segment `a-b` with isotropic Gaussian noise.
pub fn wall_points<R: Rng>(rng: &mut R, a: P, b: P, n: usize, sigma: f64) -> Vec<P> {
    let noise = Normal::new(0.0, sigma).unwrap();
    (0..n)
        .map(|_| {
            let t: f64 = rng.random();
            a + (b - a) * t + P::new(noise.sample(rng), noise.sample(rng))
        })
        .collect()
}

/// Corners of the three-wall fixture; wall `w` runs from corner `w` to `w + 1`.
pub const CORNERS: [(f64, f64); 4] = [(0.0, 8.0), (0.0, 0.0), (12.0, 0.0), (12.0, 6.0)];
pub const CORNER_POINTS: usize = 200;
pub const CORNER_SIGMA: f64 = 0.05;

pub fn corner(w: usize) -> P {
    P::new(CORNERS[w].0, CORNERS[w].1)
}

/// Three walls joined at two corners, 200 points each, with labels.
pub fn corner_fixture<R: Rng>(rng: &mut R) -> (Vec<P>, Vec<usize>) {
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for w in 0..3 {
        pts.extend(wall_points(rng, corner(w), corner(w + 1), CORNER_POINTS, CORNER_SIGMA));
        labels.extend(std::iter::repeat_n(w, CORNER_POINTS));
    }
    (pts, labels)
}

/// Majority ground-truth label in `members` and its share.
pub fn majority(members: &[usize], labels: &[usize]) -> (usize, f64) {
    let mut counts = std::collections::BTreeMap::new();
    for &m in members {
        *counts.entry(labels[m]).or_insert(0usize) += 1;
    }
    let (label, count) = counts.into_iter().max_by_key(|&(_, c)| c).unwrap();
    (label, count as f64 / members.len() as f64)
}

pub fn purity(members: &[usize], labels: &[usize]) -> f64 {
    majority(members, labels).1
}

/// Sampling standard deviations of the TLS slope and intercept for `n`
/// points uniform on `x in [x0, x1]` along `y = m x + c` with isotropic noise
/// `sigma`: the angle error has variance `sigma^2 / (n var_along)` and the
/// line passes through the centroid, which moves by `sigma / sqrt(n)` across
/// the line.
pub fn tls_std(m: f64, x0: f64, x1: f64, n: usize, sigma: f64) -> (f64, f64) {
    let cos = 1.0 / (1.0 + m * m).sqrt();
    let len = (x1 - x0) / cos;
    let var_along = len * len / 12.0;
    let sd_theta = sigma / (n as f64 * var_along).sqrt();
    let sd_m = sd_theta / (cos * cos);
    let xc = 0.5 * (x0 + x1);
    let sd_offset = sigma / (n as f64).sqrt() / cos;
    let sd_c = (sd_offset * sd_offset + xc * xc * sd_m * sd_m).sqrt();
    (sd_m, sd_c)
}
