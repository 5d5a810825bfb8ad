//! Brute-force specular path enumerator.
//!
//! Every wall sequence up to the maximum order is tried. Reflection points are
//! parametrized along the (infinite) wall lines and the total path length is
//! minimized with damped Newton iterations; the sum of Euclidean norms of
//! affine functions is convex, so the stationary point is the global
//! minimizer, which is the specular path whenever one exists. The candidate is
//! then checked for on-segment, same-side and occlusion validity.

use nalgebra::{DMatrix, DVector, Vector2};

pub type P = Vector2<f64>;

#[derive(Debug, Clone)]
pub struct Wall {
    pub a: P,
    pub b: P,
    pub id: usize,
}

#[derive(Debug, Clone)]
pub struct Circ {
    pub c: P,
    pub r: f64,
}

#[derive(Debug, Clone)]
pub struct BrutePath {
    pub walls: Vec<usize>,
    pub points: Vec<P>,
    pub length: f64,
}

impl BrutePath {
    pub fn aoa(&self) -> f64 {
        let n = self.points.len();
        let d = self.points[n - 2] - self.points[n - 1];
        d.y.atan2(d.x)
    }
}

fn cross(a: P, b: P) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Open-segment test against walls and circles, written independently of the
/// library's occlusion test.
fn blocked(p: P, q: P, walls: &[Wall], circles: &[Circ]) -> bool {
    let d = q - p;
    for w in walls {
        let e = w.b - w.a;
        let den = cross(d, e);
        if den.abs() < 1e-14 * d.norm() * e.norm() {
            continue;
        }
        let t = cross(w.a - p, e) / den;
        let s = cross(w.a - p, d) / den;
        if t > 1e-9 && t < 1.0 - 1e-9 && (-1e-12..=1.0 + 1e-12).contains(&s) {
            return true;
        }
    }
    for c in circles {
        let t = ((c.c - p).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        if (p + d * t - c.c).norm() < c.r {
            return true;
        }
    }
    false
}

fn path_points(tx: P, rx: P, seq: &[&Wall], t: &DVector<f64>) -> Vec<P> {
    let mut pts = vec![tx];
    for (j, w) in seq.iter().enumerate() {
        pts.push(w.a + (w.b - w.a) * t[j]);
    }
    pts.push(rx);
    pts
}

fn length(pts: &[P], delta: f64) -> f64 {
    pts.windows(2).map(|l| ((l[1] - l[0]).norm_squared() + delta * delta).sqrt()).sum()
}

/// Minimizes the path length over the line parameters of `seq`.
///
/// Each leg length is smoothed to `sqrt(|v|^2 + delta^2)` and `delta` is driven
/// to zero; plain Newton can stall on the kinks where a leg collapses.
pub fn stationary_path(tx: P, rx: P, seq: &[&Wall]) -> Option<(DVector<f64>, f64)> {
    let k = seq.len();
    let mut t = DVector::from_element(k, 0.5);
    let dirs: Vec<P> = seq.iter().map(|w| w.b - w.a).collect();
    for delta in [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8, 0.0] {
        for _ in 0..100 {
            let pts = path_points(tx, rx, seq, &t);
            let mut g = DVector::zeros(k);
            let mut h = DMatrix::zeros(k, k);
            for leg in 0..=k {
                let v = pts[leg + 1] - pts[leg];
                let len = (v.norm_squared() + delta * delta).sqrt();
                if len < 1e-14 {
                    return None;
                }
                let u = v / len;
                let m = (nalgebra::Matrix2::identity() - u * u.transpose()) / len;
                // leg runs from point `leg` (param leg-1) to point `leg+1` (param leg)
                if leg >= 1 {
                    let j = leg - 1;
                    g[j] -= u.dot(&dirs[j]);
                    h[(j, j)] += dirs[j].dot(&(m * dirs[j]));
                }
                if leg < k {
                    let j = leg;
                    g[j] += u.dot(&dirs[j]);
                    h[(j, j)] += dirs[j].dot(&(m * dirs[j]));
                }
                if leg >= 1 && leg < k {
                    let (i, j) = (leg - 1, leg);
                    let c = -dirs[i].dot(&(m * dirs[j]));
                    h[(i, j)] += c;
                    h[(j, i)] += c;
                }
            }
            if g.amax() < 1e-14 {
                break;
            }
            let step = h.clone().lu().solve(&(-&g)).unwrap_or_else(|| -&g);
            let f0 = length(&pts, delta);
            let mut a = 1.0;
            loop {
                let cand = &t + &step * a;
                if length(&path_points(tx, rx, seq, &cand), delta) <= f0 + 1e-15 || a < 1e-12 {
                    t = cand;
                    break;
                }
                a *= 0.5;
            }
            if (&step * a).amax() < 1e-16 {
                break;
            }
        }
    }
    let f = length(&path_points(tx, rx, seq, &t), 0.0);
    Some((t, f))
}

/// Enumerates every wall sequence and returns the shortest valid path
/// (ties to the lower order), or `None`.
pub fn brute_force_trace(tx: P, rx: P, walls: &[Wall], circles: &[Circ], max_order: usize) -> Option<BrutePath> {
    let mut best: Option<BrutePath> = None;
    if !blocked(tx, rx, walls, circles) {
        best = Some(BrutePath {
            walls: vec![],
            points: vec![tx, rx],
            length: (rx - tx).norm(),
        });
    }
    let mut seqs: Vec<Vec<usize>> = (0..walls.len()).map(|i| vec![i]).collect();
    for _order in 1..=max_order {
        let mut next = Vec::new();
        for seq in &seqs {
            let ws: Vec<&Wall> = seq.iter().map(|&i| &walls[i]).collect();
            if let Some(path) = validate(tx, rx, &ws, walls, circles) {
                let better = best.as_ref().map_or(true, |b| path.length < b.length - 1e-9);
                if better {
                    best = Some(path);
                }
            }
            for i in 0..walls.len() {
                if *seq.last().unwrap() != i {
                    let mut s = seq.clone();
                    s.push(i);
                    next.push(s);
                }
            }
        }
        seqs = next;
    }
    best
}

fn validate(tx: P, rx: P, seq: &[&Wall], walls: &[Wall], circles: &[Circ]) -> Option<BrutePath> {
    let (t, len) = stationary_path(tx, rx, seq)?;
    if t.iter().any(|&ti| !(-1e-12..=1.0 + 1e-12).contains(&ti)) {
        return None;
    }
    let pts = path_points(tx, rx, seq, &t);
    // collapsed legs mean the minimizer sits on a wall junction (a kink of the
    // length function), not on a specular path
    if pts.windows(2).any(|l| (l[1] - l[0]).norm() < 1e-6) {
        return None;
    }
    for (j, w) in seq.iter().enumerate() {
        let e = w.b - w.a;
        let s_in = cross(e, pts[j] - w.a);
        let s_out = cross(e, pts[j + 2] - w.a);
        if !(s_in * s_out > 0.0) {
            return None;
        }
    }
    if pts.windows(2).any(|l| blocked(l[0], l[1], walls, circles)) {
        return None;
    }
    Some(BrutePath {
        walls: seq.iter().map(|w| w.id).collect(),
        points: pts,
        length: len,
    })
}

/// A small random scene inside `[-10, 10]^2`: three to six walls, an
/// occasional circular obstacle, and random transmitter/receiver positions.
pub fn random_scene<R: rand::Rng>(rng: &mut R) -> (Vec<Wall>, Vec<Circ>, P, P) {
    let pt = |rng: &mut R| P::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
    let n_walls = rng.random_range(3..=5);
    let mut walls = Vec::new();
    for id in 0..n_walls {
        let a = pt(rng);
        let ang: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let len = rng.random_range(4.0..14.0);
        let b = a + P::new(ang.cos(), ang.sin()) * len;
        walls.push(Wall { a, b, id: 10 + id });
    }
    let mut circles = Vec::new();
    if rng.random_bool(0.3) {
        circles.push(Circ {
            c: pt(rng),
            r: rng.random_range(0.3..1.5),
        });
    }
    let inside = |q: &P, circles: &[Circ]| circles.iter().any(|c| (q - c.c).norm() < c.r);
    let mut tx = pt(rng);
    while inside(&tx, &circles) {
        tx = pt(rng);
    }
    let mut rx = pt(rng);
    while inside(&rx, &circles) {
        rx = pt(rng);
    }
    // half the scenes get a screen across the direct line so that reflected
    // links are well represented
    if rng.random_bool(0.5) {
        let mid = (tx + rx) * 0.5;
        let d = (rx - tx).normalize();
        let n = P::new(-d.y, d.x);
        let off = rng.random_range(-1.0..1.0);
        let half = rng.random_range(1.0..3.0);
        walls.push(Wall {
            a: mid + n * (off - half),
            b: mid + n * (off + half),
            id: 10 + walls.len(),
        });
    }
    (walls, circles, tx, rx)
}
