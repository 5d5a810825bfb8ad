//! Wall extraction from a 2D obstacle point cloud: variational Bayes Gaussian
//! mixture clustering, total-least-squares line fits, circle covering of
//! clutter and AoA ray / wall intersection.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
#[cfg(not(feature = "std"))]
use num_traits::Float as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{line_params, point_segment_distance, unit, Point};
use crate::models::LineOfReflection;
use crate::world::Circle;
use crate::{Error, Result};

/// Obstacle points in the world frame, with a source tag per point (the
/// scan sample that produced it).
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PointCloud2D {
    pub points: Vec<Point>,
    pub tags: Vec<usize>,
}

impl PointCloud2D {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let tags = (0..points.len()).collect();
        Self::with_tags(points, tags)
    }

    pub fn with_tags(points: Vec<Point>, tags: Vec<usize>) -> Result<Self> {
        if points.len() != tags.len() {
            return Err(Error::Shape("one tag per point".into()));
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::Config("point coordinates must be finite".into()));
        }
        Ok(Self { points, tags })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Point, tag: usize) {
        if p.x.is_finite() && p.y.is_finite() {
            self.points.push(p);
            self.tags.push(tag);
        }
    }
}

/// Clustering and fitting parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MapConfig {
    pub k_max: usize,
    pub restarts: usize,
    /// Components with a smaller share of the responsibility mass are pruned.
    pub min_mass: f64,
    pub min_members: usize,
    /// Largest RMS distance (m) of members to their fitted line.
    pub residual_max: f64,
    /// Ratio of the standard deviations along and across the fitted line
    /// below which a cluster is not treated as a wall.
    pub min_aspect: f64,
    /// Collinear clusters whose projections are closer than this (m) merge.
    pub merge_gap: f64,
    pub merge_angle: f64,
    /// Padding (m) of a wall's member extent for ray intersection.
    pub extent_pad: f64,
    pub seed: u64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            k_max: 8,
            restarts: 5,
            min_mass: 0.02,
            min_members: 5,
            residual_max: 0.25,
            min_aspect: 3.0,
            merge_gap: 1.0,
            merge_angle: 5f64.to_radians(),
            extent_pad: 0.5,
            seed: 0,
        }
    }
}

/// Total-least-squares line fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LineFit {
    pub lor: LineOfReflection,
    pub centroid: Point,
    /// Unit direction of the line.
    pub direction: Point,
    /// RMS orthogonal distance of the points to the line (m).
    pub residual: f64,
    /// Standard deviation along the line over the one across it.
    pub aspect: f64,
}

/// One wall: member indices into the cloud and the fitted line.
#[derive(Debug, Clone, PartialEq)]
pub struct WallCluster {
    pub members: Vec<usize>,
    pub lor: LineOfReflection,
    pub residual: f64,
    /// Wall segment spanned by the members, unpadded.
    pub start: Point,
    pub end: Point,
}

/// Raw clustering output.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub groups: Vec<Vec<usize>>,
    /// Evidence lower bound of the kept mixture (standardized data).
    pub elbo: f64,
    /// Set when the input has no spread and everything was put in one group.
    pub degenerate: bool,
}

/// Fits a line through `points` by total least squares. When the line is
/// steeper than the slope limit the rotated-frame representation is used.
pub fn fit_lor(points: &[Point], cfg: &MapConfig) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::Config("a line fit needs at least two points".into()));
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Point::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let (lam_max, direction) = crate::planner::max_eig2(&cov);
    let lam_min = (cov.trace() - lam_max).max(0.0);
    if lam_max <= 1e-24 {
        return Err(Error::Degenerate("coincident points".into()));
    }
    let aspect = if lam_min > 0.0 { (lam_max / lam_min).sqrt() } else { f64::INFINITY };
    if aspect < cfg.min_aspect {
        return Err(Error::Geometry("point set is not elongated enough for a wall".into()));
    }
    let lor = LineOfReflection::through(&centroid, &(centroid + direction))?;
    // residual from the line itself so that it reflects the stored (m, c)
    let residual = (points.iter().map(|p| lor.signed_distance(p).powi(2)).sum::<f64>() / n).sqrt();
    Ok(LineFit {
        lor,
        centroid,
        direction,
        residual,
        aspect,
    })
}

/// Clusters the cloud into walls: mixture clustering, collinear merging, then
/// a line fit per group. Groups that are too small, not elongated or too
/// rough are dropped.
pub fn cluster_walls(pc: &PointCloud2D, cfg: &MapConfig) -> Result<Vec<WallCluster>> {
    let clustering = cluster_points(&pc.points, cfg)?;
    let mut walls = Vec::new();
    for members in clustering.groups {
        if let Some(w) = wall_from_members(&pc.points, members, cfg) {
            walls.push(w);
        }
    }
    Ok(refine_walls(&pc.points, walls, cfg))
}

/// A few rounds of reassigning wall points to the nearest fitted segment and
/// refitting. Mixture components near a corner tend to take some points of
/// the adjacent wall.
fn refine_walls(points: &[Point], mut walls: Vec<WallCluster>, cfg: &MapConfig) -> Vec<WallCluster> {
    for _ in 0..5 {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); walls.len()];
        let mut changed = false;
        for (wi, w) in walls.iter().enumerate() {
            for &i in &w.members {
                let best = (0..walls.len())
                    .min_by(|&a, &b| {
                        let da = point_segment_distance(&points[i], &walls[a].start, &walls[a].end);
                        let db = point_segment_distance(&points[i], &walls[b].start, &walls[b].end);
                        da.total_cmp(&db)
                    })
                    .expect("non-empty");
                changed |= best != wi;
                members[best].push(i);
            }
        }
        if !changed {
            break;
        }
        let next: Option<Vec<WallCluster>> = members
            .into_iter()
            .map(|mut m| {
                m.sort_unstable();
                wall_from_members(points, m, cfg)
            })
            .collect();
        // a wall that no longer fits ends the refinement with the last
        // consistent set
        match next {
            Some(next) => walls = next,
            None => break,
        }
    }
    walls
}

fn wall_from_members(points: &[Point], members: Vec<usize>, cfg: &MapConfig) -> Option<WallCluster> {
    if members.len() < cfg.min_members {
        return None;
    }
    let pts: Vec<Point> = members.iter().map(|&i| points[i]).collect();
    let fit = fit_lor(&pts, cfg).ok()?;
    if fit.residual > cfg.residual_max {
        return None;
    }
    let (lo, hi) = extent(&pts, &fit.centroid, &fit.direction);
    Some(WallCluster {
        members,
        lor: fit.lor,
        residual: fit.residual,
        start: fit.lor.project(&(fit.centroid + fit.direction * lo)),
        end: fit.lor.project(&(fit.centroid + fit.direction * hi)),
    })
}

fn extent(pts: &[Point], origin: &Point, dir: &Point) -> (f64, f64) {
    pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let t = (p - origin).dot(dir);
        (lo.min(t), hi.max(t))
    })
}

/// Variational Bayes Gaussian mixture clustering with pruning of empty
/// components and merging of collinear neighbours.
pub fn cluster_points(points: &[Point], cfg: &MapConfig) -> Result<Clustering> {
    if points.len() < 10 {
        return Err(Error::Config("clustering needs at least 10 points".into()));
    }
    if cfg.k_max == 0 || cfg.restarts == 0 {
        return Err(Error::Config("k_max and restarts must be positive".into()));
    }
    let n = points.len();
    let mean = points.iter().fold(Point::zeros(), |a, p| a + p) / n as f64;
    let var = points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n as f64;
    if var <= 1e-20 {
        return Ok(Clustering {
            groups: vec![(0..n).collect()],
            elbo: 0.0,
            degenerate: true,
        });
    }
    let scale = (var / 2.0).sqrt();
    let xs: Vec<Vector2<f64>> = points.iter().map(|p| (p - mean) / scale).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prior = Prior::new(cfg.k_max);
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for _ in 0..cfg.restarts {
        let init = kmeans_pp(&xs, cfg.k_max, &mut rng);
        let (elbo, resp) = vb_gmm(&xs, init, &prior);
        if best.as_ref().map_or(true, |(b, _)| elbo > *b) {
            best = Some((elbo, resp));
        }
    }
    let (elbo, resp) = best.expect("at least one restart");
    let k = resp[0].len();

    // prune light components, then assign every point to its most
    // responsible survivor
    let mass: Vec<f64> = (0..k).map(|j| resp.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut alive: Vec<usize> = (0..k).filter(|&j| mass[j] >= cfg.min_mass).collect();
    if alive.is_empty() {
        let heaviest = (0..k).max_by(|&a, &b| mass[a].total_cmp(&mass[b])).expect("k > 0");
        alive.push(heaviest);
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); alive.len()];
    for (i, r) in resp.iter().enumerate() {
        let g = (0..alive.len()).max_by(|&a, &b| r[alive[a]].total_cmp(&r[alive[b]])).expect("non-empty");
        groups[g].push(i);
    }
    groups.retain(|g| !g.is_empty());
    let groups = merge_collinear(points, groups, cfg);
    Ok(Clustering {
        groups,
        elbo,
        degenerate: false,
    })
}

/// Repeatedly merges the pair of groups that best forms one wall: nearly
/// parallel fits, each centroid close to the other's line, and projections
/// that overlap or leave a gap of at most `merge_gap`.
fn merge_collinear(points: &[Point], mut groups: Vec<Vec<usize>>, cfg: &MapConfig) -> Vec<Vec<usize>> {
    loop {
        let fits: Vec<Option<LineFit>> = groups
            .iter()
            .map(|g| {
                let pts: Vec<Point> = g.iter().map(|&i| points[i]).collect();
                fit_lor(&pts, cfg).ok()
            })
            .collect();
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                let (Some(a), Some(b)) = (&fits[i], &fits[j]) else {
                    continue;
                };
                let cos = a.direction.dot(&b.direction).abs().min(1.0);
                if cos.acos() > cfg.merge_angle {
                    continue;
                }
                let tol = 3.0 * a.residual.max(b.residual) + 0.05;
                let off_a = a.lor.signed_distance(&b.centroid).abs();
                let off_b = b.lor.signed_distance(&a.centroid).abs();
                if off_a > tol || off_b > tol {
                    continue;
                }
                let pa: Vec<Point> = groups[i].iter().map(|&k| points[k]).collect();
                let pb: Vec<Point> = groups[j].iter().map(|&k| points[k]).collect();
                let (la, ha) = extent(&pa, &a.centroid, &a.direction);
                let (lb, hb) = extent(&pb, &a.centroid, &a.direction);
                let gap = (lb - ha).max(la - hb);
                if gap > cfg.merge_gap {
                    continue;
                }
                let mut union = pa;
                union.extend(pb);
                let Ok(u) = fit_lor(&union, cfg) else {
                    continue;
                };
                if u.residual > tol {
                    continue;
                }
                if best.map_or(true, |(r, _, _)| u.residual < r) {
                    best = Some((u.residual, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else {
            return groups;
        };
        let moved = groups.remove(j);
        groups[i].extend(moved);
        groups[i].sort_unstable();
    }
}

/// k-means++ seeding followed by a few Lloyd iterations; returns hard
/// responsibilities.
fn kmeans_pp<R: Rng>(xs: &[Vector2<f64>], k: usize, rng: &mut R) -> Vec<usize> {
    let n = xs.len();
    let mut centers = vec![xs[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = xs.iter().map(|x| (x - centers[0]).norm_squared()).collect();
    while centers.len() < k.min(n) {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                r -= d;
                if r <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centers.push(xs[next]);
        for (d, x) in d2.iter_mut().zip(xs) {
            *d = d.min((x - xs[next]).norm_squared());
        }
    }
    let mut labels = vec![0; n];
    for _ in 0..10 {
        for (l, x) in labels.iter_mut().zip(xs) {
            *l = (0..centers.len())
                .min_by(|&a, &b| (x - centers[a]).norm_squared().total_cmp(&(x - centers[b]).norm_squared()))
                .expect("k > 0");
        }
        let mut sums = vec![(Vector2::zeros(), 0usize); centers.len()];
        for (l, x) in labels.iter().zip(xs) {
            sums[*l].0 += x;
            sums[*l].1 += 1;
        }
        for (c, (s, cnt)) in centers.iter_mut().zip(sums) {
            if cnt > 0 {
                *c = s / cnt as f64;
            }
        }
    }
    labels
}

/// Normal-Wishart / Dirichlet prior for 2D data standardized to unit
/// variance per axis.
struct Prior {
    k: usize,
    alpha0: f64,
    beta0: f64,
    m0: Vector2<f64>,
    w0_inv: Matrix2<f64>,
    nu0: f64,
}

impl Prior {
    fn new(k: usize) -> Self {
        let nu0 = 3.0;
        // prior covariance scale well below the data scale so that thin
        // components are not smeared
        let s0: f64 = 0.05;
        Self {
            k,
            alpha0: 1e-3,
            beta0: 1.0,
            m0: Vector2::zeros(),
            w0_inv: Matrix2::identity() * (nu0 * s0 * s0),
            nu0,
        }
    }
}

struct Posterior {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    m: Vec<Vector2<f64>>,
    w: Vec<Matrix2<f64>>,
    nu: Vec<f64>,
}

struct Stats {
    nk: Vec<f64>,
    xbar: Vec<Vector2<f64>>,
    s: Vec<Matrix2<f64>>,
}

const D: f64 = 2.0;

fn stats(xs: &[Vector2<f64>], resp: &[Vec<f64>], k: usize) -> Stats {
    let mut nk = vec![0.0; k];
    let mut xbar = vec![Vector2::zeros(); k];
    for (x, r) in xs.iter().zip(resp) {
        for j in 0..k {
            nk[j] += r[j];
            xbar[j] += x * r[j];
        }
    }
    for j in 0..k {
        if nk[j] > 1e-12 {
            xbar[j] /= nk[j];
        }
    }
    let mut s = vec![Matrix2::zeros(); k];
    for (x, r) in xs.iter().zip(resp) {
        for j in 0..k {
            let d = x - xbar[j];
            s[j] += d * d.transpose() * r[j];
        }
    }
    for j in 0..k {
        if nk[j] > 1e-12 {
            s[j] /= nk[j];
        }
    }
    Stats { nk, xbar, s }
}

fn m_step(st: &Stats, pr: &Prior) -> Posterior {
    let k = pr.k;
    let mut post = Posterior {
        alpha: vec![0.0; k],
        beta: vec![0.0; k],
        m: vec![Vector2::zeros(); k],
        w: vec![Matrix2::zeros(); k],
        nu: vec![0.0; k],
    };
    for j in 0..k {
        let nk = st.nk[j];
        post.alpha[j] = pr.alpha0 + nk;
        post.beta[j] = pr.beta0 + nk;
        post.m[j] = (pr.m0 * pr.beta0 + st.xbar[j] * nk) / post.beta[j];
        let d = st.xbar[j] - pr.m0;
        let w_inv = pr.w0_inv + st.s[j] * nk + d * d.transpose() * (pr.beta0 * nk / (pr.beta0 + nk));
        post.w[j] = w_inv.try_inverse().unwrap_or_else(|| pr.w0_inv.try_inverse().expect("prior is PD"));
        post.nu[j] = pr.nu0 + nk;
    }
    post
}

/// `E[ln |Lambda_k|]` and `E[ln pi_k]`.
fn expectations(post: &Posterior) -> (Vec<f64>, Vec<f64>) {
    let alpha_hat: f64 = post.alpha.iter().sum();
    let ln_lambda = post
        .w
        .iter()
        .zip(&post.nu)
        .map(|(w, nu)| digamma(0.5 * nu) + digamma(0.5 * (nu - 1.0)) + D * core::f64::consts::LN_2 + w.determinant().ln())
        .collect();
    let ln_pi = post.alpha.iter().map(|a| digamma(*a) - digamma(alpha_hat)).collect();
    (ln_lambda, ln_pi)
}

fn e_step(xs: &[Vector2<f64>], post: &Posterior, resp: &mut [Vec<f64>]) {
    let k = post.alpha.len();
    let (ln_lambda, ln_pi) = expectations(post);
    for (x, r) in xs.iter().zip(resp.iter_mut()) {
        let mut mx = f64::NEG_INFINITY;
        for j in 0..k {
            let d = x - post.m[j];
            let quad = D / post.beta[j] + post.nu[j] * (d.transpose() * post.w[j] * d)[(0, 0)];
            r[j] = ln_pi[j] + 0.5 * ln_lambda[j] - (2.0 * PI).ln() - 0.5 * quad;
            mx = mx.max(r[j]);
        }
        let mut z = 0.0;
        for v in r.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        for v in r.iter_mut() {
            *v /= z;
        }
    }
}

fn ln_c(alpha: &[f64]) -> f64 {
    libm::lgamma(alpha.iter().sum()) - alpha.iter().map(|a| libm::lgamma(*a)).sum::<f64>()
}

fn ln_b(w: &Matrix2<f64>, nu: f64) -> f64 {
    -0.5 * nu * w.determinant().ln()
        - 0.5 * nu * D * core::f64::consts::LN_2
        - 0.25 * D * (D - 1.0) * PI.ln()
        - libm::lgamma(0.5 * nu)
        - libm::lgamma(0.5 * (nu - 1.0))
}

/// Evidence lower bound for responsibilities `resp` and the posterior built
/// from them.
fn elbo(resp: &[Vec<f64>], st: &Stats, post: &Posterior, pr: &Prior) -> f64 {
    let k = pr.k;
    let (ln_lambda, ln_pi) = expectations(post);
    let w0 = pr.w0_inv.try_inverse().expect("prior is PD");
    let mut e_px = 0.0;
    let mut e_pmu = 0.0;
    let mut e_qmu = 0.0;
    for j in 0..k {
        let dx = st.xbar[j] - post.m[j];
        e_px += 0.5
            * st.nk[j]
            * (ln_lambda[j]
                - D / post.beta[j]
                - post.nu[j] * (st.s[j] * post.w[j]).trace()
                - post.nu[j] * (dx.transpose() * post.w[j] * dx)[(0, 0)]
                - D * (2.0 * PI).ln());
        let dm = post.m[j] - pr.m0;
        e_pmu += 0.5
            * (D * (pr.beta0 / (2.0 * PI)).ln() + ln_lambda[j]
                - D * pr.beta0 / post.beta[j]
                - pr.beta0 * post.nu[j] * (dm.transpose() * post.w[j] * dm)[(0, 0)])
            + 0.5 * (pr.nu0 - D - 1.0) * ln_lambda[j]
            - 0.5 * post.nu[j] * (pr.w0_inv * post.w[j]).trace();
        let entropy = -ln_b(&post.w[j], post.nu[j]) - 0.5 * (post.nu[j] - D - 1.0) * ln_lambda[j] + 0.5 * post.nu[j] * D;
        e_qmu += 0.5 * ln_lambda[j] + 0.5 * D * (post.beta[j] / (2.0 * PI)).ln() - 0.5 * D - entropy;
    }
    e_pmu += k as f64 * ln_b(&w0, pr.nu0);
    let e_pz: f64 = resp.iter().map(|r| r.iter().zip(&ln_pi).map(|(a, b)| a * b).sum::<f64>()).sum();
    let e_qz: f64 = resp.iter().flat_map(|r| r.iter()).filter(|&&v| v > 1e-300).map(|v| v * v.ln()).sum();
    let e_ppi = ln_c(&vec![pr.alpha0; k]) + (pr.alpha0 - 1.0) * ln_pi.iter().sum::<f64>();
    let e_qpi = post.alpha.iter().zip(&ln_pi).map(|(a, l)| (a - 1.0) * l).sum::<f64>() + ln_c(&post.alpha);
    e_px + e_pz + e_ppi + e_pmu - e_qz - e_qpi - e_qmu
}

/// Coordinate ascent from hard initial labels; returns the final bound and
/// responsibilities.
fn vb_gmm(xs: &[Vector2<f64>], labels: Vec<usize>, pr: &Prior) -> (f64, Vec<Vec<f64>>) {
    let k = pr.k;
    let mut resp: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| {
            let mut r = vec![0.0; k];
            r[l] = 1.0;
            r
        })
        .collect();
    let mut last = f64::NEG_INFINITY;
    let mut bound = last;
    for _ in 0..500 {
        let st = stats(xs, &resp, k);
        let post = m_step(&st, pr);
        bound = elbo(&resp, &st, &post, pr);
        if (bound - last).abs() < 1e-8 * xs.len() as f64 {
            break;
        }
        last = bound;
        e_step(xs, &post, &mut resp);
    }
    (bound, resp)
}

/// Digamma function: upward recurrence to `x >= 10`, then the asymptotic
/// series.
pub(crate) fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let f = 1.0 / (x * x);
    acc + x.ln() - 0.5 / x - f * (1.0 / 12.0 - f * (1.0 / 120.0 - f * (1.0 / 252.0 - f * (1.0 / 240.0 - f / 132.0))))
}

/// Circles covering a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleCover {
    pub circles: Vec<Circle>,
    /// Sum of the circle areas (m^2); overlaps are counted twice.
    pub area: f64,
}

/// One circle per occupied grid cell of pitch `cell`: centred on the member
/// centroid, radius the largest member distance plus `margin`.
pub fn cover_with_circles(points: &[Point], cell: f64, margin: f64) -> Result<CircleCover> {
    if !(cell > 0.0) || !(margin > 0.0) {
        return Err(Error::Config("cell and margin must be positive".into()));
    }
    let mut buckets: BTreeMap<(i64, i64), Vec<Point>> = BTreeMap::new();
    for p in points {
        let key = ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
        buckets.entry(key).or_default().push(*p);
    }
    let circles: Vec<Circle> = buckets
        .values()
        .map(|pts| {
            let c = pts.iter().fold(Point::zeros(), |a, p| a + p) / pts.len() as f64;
            let r = pts.iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
            Circle { center: c, radius: r + margin }
        })
        .collect();
    let area = circles.iter().map(|c| PI * c.radius * c.radius).sum();
    Ok(CircleCover { circles, area })
}

/// Nearest wall hit by the forward ray from `p` along `alpha`, with the hit
/// point. Each wall is its member segment padded by `pad` at both ends.
pub fn intersect_ray_lor(p: &Point, alpha: f64, walls: &[WallCluster], pad: f64) -> Option<(usize, Point)> {
    let q = p + unit(alpha);
    let mut best: Option<(f64, usize, Point)> = None;
    for (i, w) in walls.iter().enumerate() {
        let d = w.end - w.start;
        let len = d.norm();
        let dir = if len > 0.0 { d / len } else { w.lor.direction() };
        let a = w.start - dir * pad;
        let b = w.end + dir * pad;
        let Some((t, s)) = line_params(p, &q, &a, &b) else {
            continue;
        };
        if t < 0.0 || !(0.0..=1.0).contains(&s) {
            continue;
        }
        if best.as_ref().map_or(true, |(bt, _, _)| t < *bt) {
            best = Some((t, i, p + (q - p) * t));
        }
    }
    best.map(|(_, i, hit)| (i, hit))
}

/// Index of the wall whose line is closest to `lor` in `(angle, offset)`, if
/// any lies within the given tolerances.
pub fn match_lor(lor: &LineOfReflection, walls: &[WallCluster], max_angle: f64, max_offset: f64) -> Option<usize> {
    let a0 = lor.angle();
    let anchor = lor.anchor();
    walls
        .iter()
        .enumerate()
        .filter_map(|(i, w)| {
            let mut da = (w.lor.angle() - a0).abs();
            if da > PI / 2.0 {
                da = PI - da;
            }
            let off = w.lor.signed_distance(&anchor).abs();
            (da <= max_angle && off <= max_offset).then_some((da / max_angle.max(1e-12) + off / max_offset.max(1e-12), i))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, i)| i)
}
