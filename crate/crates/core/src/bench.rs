//! Baselines, procedural indoor maps, performance profiles and suite
//! aggregation.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector, Vector2};
#[cfg(not(feature = "std"))]
use num_traits::Float as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{point_segment_distance, Bounds, Point};
use crate::models::{AoaModel, LineOfReflection, ModelVariant, NoiseConfig};
use crate::planner::{BeliefState, CostWeights, ObstacleSet, PlanningProblem};
use crate::world::{AoAMeasurement, Circle, Environment, LinkState, WallSegment};
use crate::{Error, Result};

/// AoA-following baseline: a step of length `u_max` along the measured AoA
/// for LOS and first-order NLOS links, `None` (explore) otherwise.
pub fn aoa_follower_step(meas: &AoAMeasurement, u_max: f64) -> Option<Point> {
    match meas.link.order() {
        Some(0) | Some(1) => Some(meas.unit * u_max),
        _ => None,
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    cell: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn clearance(env: &Environment, q: &Point) -> f64 {
    let w = env
        .walls
        .iter()
        .map(|w| point_segment_distance(q, &w.a, &w.b))
        .fold(f64::INFINITY, f64::min);
    let o = env
        .obstacles
        .iter()
        .map(|c| (q - c.center).norm() - c.radius)
        .fold(f64::INFINITY, f64::min);
    w.min(o)
}

/// True when the segment keeps at least `margin` from every wall and
/// obstacle (checked every 5 cm) and crosses nothing.
fn segment_safe(env: &Environment, a: &Point, b: &Point, margin: f64) -> bool {
    if !env.segment_clear(a, b) {
        return false;
    }
    let n = ((b - a).norm() / 0.05).ceil().max(1.0) as usize;
    (0..=n).all(|i| clearance(env, &(a + (b - a) * (i as f64 / n as f64))) >= margin)
}

/// Occupancy grid of cell centres that keep a clearance margin.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    min: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    free: Vec<bool>,
}

impl OccupancyGrid {
    fn empty(bounds: &Bounds, cell: f64) -> Self {
        let nx = (bounds.width() / cell).floor().max(0.0) as usize;
        let ny = (bounds.height() / cell).floor().max(0.0) as usize;
        Self {
            min: bounds.min,
            cell,
            nx,
            ny,
            free: vec![true; nx * ny],
        }
    }

    /// Cells whose centre is at least `margin` from every wall and obstacle.
    pub fn from_env(env: &Environment, margin: f64, cell: f64) -> Self {
        let mut g = Self::empty(&env.bounds, cell);
        for i in 0..g.free.len() {
            g.free[i] = clearance(env, &g.center(i)) >= margin;
        }
        g
    }

    /// Cells whose centre is at least `margin` outside every circle. Space
    /// without circles counts as free.
    pub fn from_circles(bounds: &Bounds, circles: &[Circle], margin: f64, cell: f64) -> Self {
        let mut g = Self::empty(bounds, cell);
        for c in circles {
            let r = c.radius + margin;
            let lo = g.index_of(&(c.center - Point::new(r, r)));
            let hi = g.index_of(&(c.center + Point::new(r, r)));
            for y in lo.1..=hi.1 {
                for x in lo.0..=hi.0 {
                    if x < g.nx && y < g.ny {
                        let i = y * g.nx + x;
                        if (g.center(i) - c.center).norm() < r {
                            g.free[i] = false;
                        }
                    }
                }
            }
        }
        g
    }

    fn center(&self, i: usize) -> Point {
        self.min + Point::new((i % self.nx) as f64 + 0.5, (i / self.nx) as f64 + 0.5) * self.cell
    }

    fn index_of(&self, q: &Point) -> (usize, usize) {
        let d = (q - self.min) / self.cell;
        let clamp = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n.saturating_sub(1));
        (clamp(d.x, self.nx), clamp(d.y, self.ny))
    }

    /// True when `q` lies in a free cell.
    pub fn is_free(&self, q: &Point) -> bool {
        let d = (q - self.min) / self.cell;
        if d.x < 0.0 || d.y < 0.0 || d.x >= self.nx as f64 || d.y >= self.ny as f64 {
            return false;
        }
        let (x, y) = self.index_of(q);
        self.free[y * self.nx + x]
    }

    /// True when samples every half cell along the segment are all free.
    pub fn segment_free(&self, a: &Point, b: &Point) -> bool {
        let n = ((b - a).norm() / (0.5 * self.cell)).ceil().max(1.0) as usize;
        (0..=n).all(|i| self.is_free(&(a + (b - a) * (i as f64 / n as f64))))
    }

    /// Shortest 8-connected path between the free cells nearest to `start`
    /// and `goal`, shortened by greedy shortcuts that `seg_ok` accepts. The
    /// first vertex is `start`, the last `goal`.
    pub fn path(&self, start: &Point, goal: &Point, seg_ok: impl Fn(&Point, &Point) -> bool) -> Option<Vec<Point>> {
        if seg_ok(start, goal) {
            return Some(vec![*start, *goal]);
        }
        let n_cells = self.nx * self.ny;
        let nearest = |q: &Point| {
            // search a growing window around q
            let (qx, qy) = self.index_of(q);
            for r in 0..(self.nx.max(self.ny)) {
                let mut best: Option<(f64, usize)> = None;
                for y in qy.saturating_sub(r)..=(qy + r).min(self.ny.saturating_sub(1)) {
                    for x in qx.saturating_sub(r)..=(qx + r).min(self.nx.saturating_sub(1)) {
                        let i = y * self.nx + x;
                        if self.free[i] {
                            let d = (self.center(i) - q).norm();
                            if best.is_none_or(|(bd, _)| d < bd) {
                                best = Some((d, i));
                            }
                        }
                    }
                }
                if best.is_some() {
                    return best.map(|(_, i)| i);
                }
            }
            None
        };
        if n_cells == 0 {
            return None;
        }
        let s = nearest(start)?;
        let g = nearest(goal)?;
        let mut dist = vec![f64::INFINITY; n_cells];
        let mut prev = vec![usize::MAX; n_cells];
        let mut heap = BinaryHeap::new();
        dist[s] = 0.0;
        heap.push(Open {
            f: (self.center(s) - self.center(g)).norm(),
            cell: s,
        });
        while let Some(Open { f, cell: c }) = heap.pop() {
            if c == g {
                break;
            }
            if f > dist[c] + (self.center(c) - self.center(g)).norm() + 1e-9 {
                continue;
            }
            let (cx, cy) = ((c % self.nx) as i64, (c / self.nx) as i64);
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    let (x, y) = (cx + dx, cy + dy);
                    if (dx == 0 && dy == 0) || x < 0 || y < 0 || x >= self.nx as i64 || y >= self.ny as i64 {
                        continue;
                    }
                    let n = y as usize * self.nx + x as usize;
                    if !self.free[n] {
                        continue;
                    }
                    // no corner cutting
                    if dx != 0 && dy != 0 && !(self.free[cy as usize * self.nx + x as usize] && self.free[y as usize * self.nx + cx as usize]) {
                        continue;
                    }
                    let d = dist[c] + self.cell * ((dx * dx + dy * dy) as f64).sqrt();
                    if d < dist[n] {
                        dist[n] = d;
                        prev[n] = c;
                        heap.push(Open {
                            f: d + (self.center(n) - self.center(g)).norm(),
                            cell: n,
                        });
                    }
                }
            }
        }
        if !dist[g].is_finite() {
            return None;
        }
        let mut cells = vec![g];
        while *cells.last().expect("non-empty") != s {
            cells.push(prev[*cells.last().expect("non-empty")]);
        }
        cells.reverse();
        let mut raw = vec![*start];
        raw.extend(cells.iter().map(|&c| self.center(c)));
        raw.push(*goal);
        let mut out = vec![raw[0]];
        let mut i = 0;
        while i + 1 < raw.len() {
            let mut j = raw.len() - 1;
            while j > i + 1 && !seg_ok(&raw[i], &raw[j]) {
                j -= 1;
            }
            out.push(raw[j]);
            i = j;
        }
        Some(out)
    }
}

/// Shortest polyline from `start` to `goal` in the true environment that
/// keeps `margin` from walls and obstacles (grid of pitch `cell`, then
/// line-of-sight shortcuts). `None` when no connection exists.
pub fn shortest_path(env: &Environment, start: &Point, goal: &Point, margin: f64, cell: f64) -> Option<Vec<Point>> {
    OccupancyGrid::from_env(env, margin, cell).path(start, goal, |a, b| segment_safe(env, a, b, margin))
}

pub fn path_length(path: &[Point]) -> f64 {
    path.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Parameters of the procedural room-grid generator.
///
/// The map is a `rooms_x x rooms_y` grid of square rooms. A random spanning
/// tree of the room adjacency graph gets doors, so every room is reachable;
/// each remaining interior wall gets a door with probability `extra_doors`.
/// Rooms hold up to `furniture` circular obstacles.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MapSpec {
    pub seed: u64,
    pub rooms_x: usize,
    pub rooms_y: usize,
    pub room_size: f64,
    pub door_width: f64,
    pub extra_doors: f64,
    pub furniture: usize,
    pub furniture_radius: (f64, f64),
    /// Minimum clearance (m) of the start and the transponder from walls
    /// and furniture.
    pub clearance: f64,
}

impl Default for MapSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            rooms_x: 3,
            rooms_y: 2,
            room_size: 8.0,
            door_width: 2.0,
            extra_doors: 0.25,
            furniture: 2,
            furniture_radius: (0.3, 0.6),
            clearance: 1.0,
        }
    }
}

/// A generated map with start and transponder positions in different rooms
/// (when there is more than one room).
#[derive(Debug, Clone)]
pub struct GeneratedMap {
    pub env: Environment,
    pub start: Point,
}

/// Builds the map described by `spec`.
pub fn generate_map(spec: &MapSpec) -> Result<GeneratedMap> {
    let (rx, ry, s) = (spec.rooms_x, spec.rooms_y, spec.room_size);
    if rx == 0 || ry == 0 || !(s > 2.0 * spec.clearance + 1.0) || !(spec.door_width > 0.0) || !(spec.door_width + 2.0 < s) {
        return Err(Error::Config("map spec has no room for doors and clearance".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let room = |x: usize, y: usize| y * rx + x;
    // interior edges: (room a, room b, vertical wall?)
    let mut edges = Vec::new();
    for y in 0..ry {
        for x in 0..rx {
            if x + 1 < rx {
                edges.push((room(x, y), room(x + 1, y), true));
            }
            if y + 1 < ry {
                edges.push((room(x, y), room(x, y + 1), false));
            }
        }
    }
    // randomized depth-first spanning tree
    let mut door = vec![false; edges.len()];
    let mut seen = vec![false; rx * ry];
    let mut stack = vec![rng.random_range(0..rx * ry)];
    seen[stack[0]] = true;
    while let Some(&r) = stack.last() {
        let cand: Vec<usize> = (0..edges.len())
            .filter(|&e| {
                let (a, b, _) = edges[e];
                (a == r && !seen[b]) || (b == r && !seen[a])
            })
            .collect();
        if cand.is_empty() {
            stack.pop();
            continue;
        }
        let e = cand[rng.random_range(0..cand.len())];
        door[e] = true;
        let other = if edges[e].0 == r { edges[e].1 } else { edges[e].0 };
        seen[other] = true;
        stack.push(other);
    }
    for d in door.iter_mut() {
        if !*d && rng.random::<f64>() < spec.extra_doors {
            *d = true;
        }
    }

    let mut walls = Vec::new();
    let mut add = |a: Point, b: Point| {
        let id = walls.len();
        walls.push(WallSegment::new(a, b, id));
    };
    let (w, h) = (rx as f64 * s, ry as f64 * s);
    add(Point::new(0.0, 0.0), Point::new(w, 0.0));
    add(Point::new(w, 0.0), Point::new(w, h));
    add(Point::new(w, h), Point::new(0.0, h));
    add(Point::new(0.0, h), Point::new(0.0, 0.0));
    let half = spec.door_width * 0.5;
    for (e, &(a, _, vertical)) in edges.iter().enumerate() {
        let (x, y) = ((a % rx) as f64 * s, (a / rx) as f64 * s);
        // wall between room a and its right/upper neighbour
        let (p0, dir) = if vertical {
            (Point::new(x + s, y), Point::new(0.0, 1.0))
        } else {
            (Point::new(x, y + s), Point::new(1.0, 0.0))
        };
        if door[e] {
            let c = rng.random_range(1.0 + half..s - 1.0 - half);
            add(p0, p0 + dir * (c - half));
            add(p0 + dir * (c + half), p0 + dir * s);
        } else {
            add(p0, p0 + dir * s);
        }
    }

    let mut obstacles: Vec<Circle> = Vec::new();
    let (r_lo, r_hi) = spec.furniture_radius;
    for r in 0..rx * ry {
        let (x, y) = ((r % rx) as f64 * s, (r / rx) as f64 * s);
        for _ in 0..spec.furniture {
            let radius = if r_hi > r_lo { rng.random_range(r_lo..r_hi) } else { r_lo };
            let lo = 1.5 + radius;
            if lo >= s - lo {
                continue;
            }
            let c = Point::new(x + rng.random_range(lo..s - lo), y + rng.random_range(lo..s - lo));
            if obstacles.iter().all(|o| (o.center - c).norm() > o.radius + radius + 1.5) {
                obstacles.push(Circle { center: c, radius });
            }
        }
    }

    let bounds = Bounds::new(Point::new(-0.5, -0.5), Point::new(w + 0.5, h + 0.5));
    let probe = Environment::new(walls.clone(), obstacles.clone(), Point::new(w * 0.5, h * 0.5), bounds)?;
    let place = |room_id: usize, rng: &mut ChaCha8Rng| -> Option<Point> {
        let (x, y) = ((room_id % rx) as f64 * s, (room_id / rx) as f64 * s);
        let m = spec.clearance;
        (0..1000)
            .map(|_| Point::new(x + rng.random_range(m..s - m), y + rng.random_range(m..s - m)))
            .find(|q| clearance(&probe, q) >= m)
    };
    let tx_room = rng.random_range(0..rx * ry);
    let start_room = if rx * ry > 1 {
        let k = rng.random_range(0..rx * ry - 1);
        if k >= tx_room {
            k + 1
        } else {
            k
        }
    } else {
        tx_room
    };
    let tx = place(tx_room, &mut rng).ok_or_else(|| Error::Config("no free spot for the transponder".into()))?;
    let start = place(start_room, &mut rng).ok_or_else(|| Error::Config("no free spot for the start".into()))?;
    let env = Environment::new(walls, obstacles, tx, bounds)?;
    Ok(GeneratedMap { env, start })
}

/// Coarse class of the link at the start of a mission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LinkClass {
    Los,
    FirstOrderNlos,
    HigherOrderNlos,
    NoSignal,
}

impl From<&LinkState> for LinkClass {
    fn from(l: &LinkState) -> Self {
        match l.order() {
            Some(0) => LinkClass::Los,
            Some(1) => LinkClass::FirstOrderNlos,
            Some(_) => LinkClass::HigherOrderNlos,
            None => LinkClass::NoSignal,
        }
    }
}

/// One mission outcome of a suite.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunRecord {
    pub variant: String,
    pub scenario: String,
    pub seed: u64,
    pub success: bool,
    pub path_length: f64,
    pub cycles: usize,
    pub initial_link: LinkClass,
}

impl RunRecord {
    fn problem(&self) -> (&str, u64) {
        (&self.scenario, self.seed)
    }
}

/// Performance-profile curves sampled at `taus`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProfileData {
    pub taus: Vec<f64>,
    pub curves: BTreeMap<String, Vec<f64>>,
}

/// `count` evenly spaced ratios from 1 to 3.
pub fn default_taus(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..count).map(|i| 1.0 + 2.0 * i as f64 / (count - 1) as f64).collect(),
    }
}

/// Fraction of problems (scenario, seed) each variant solved with a path no
/// longer than `tau` times the shortest successful path of any variant.
/// Problems nobody solved stay in the denominator.
pub fn performance_profile(records: &[RunRecord], taus: &[f64]) -> ProfileData {
    let mut best: BTreeMap<(&str, u64), f64> = BTreeMap::new();
    for r in records {
        let e = best.entry(r.problem()).or_insert(f64::INFINITY);
        if r.success {
            *e = e.min(r.path_length);
        }
    }
    let problems = best.len();
    let mut ratios: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        let list = ratios.entry(r.variant.clone()).or_default();
        if r.success {
            let b = best[&r.problem()];
            list.push(if b > 0.0 { r.path_length / b } else { 1.0 });
        }
    }
    let curves = ratios
        .into_iter()
        .map(|(v, rs)| {
            let curve = taus
                .iter()
                .map(|&t| {
                    if problems == 0 {
                        0.0
                    } else {
                        // tolerance for ratios that are 1 up to rounding
                        rs.iter().filter(|&&q| q <= t * (1.0 + 1e-12)).count() as f64 / problems as f64
                    }
                })
                .collect();
            (v, curve)
        })
        .collect();
    ProfileData { taus: taus.to_vec(), curves }
}

/// Success rate and path statistics of one variant, optionally restricted
/// to one initial link class.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VariantSummary {
    pub variant: String,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Sum of the path lengths of the successful runs.
    pub solved_path: f64,
}

pub fn summarize(records: &[RunRecord], class: Option<LinkClass>) -> Vec<VariantSummary> {
    // lengths are summed in problem order so the total does not depend on
    // the order of the records
    let mut by: BTreeMap<&str, (usize, BTreeMap<(&str, u64), f64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| class.is_none_or(|c| r.initial_link == c)) {
        let e = by.entry(&r.variant).or_default();
        e.0 += 1;
        if r.success {
            e.1.insert(r.problem(), r.path_length);
        }
    }
    by.into_iter()
        .map(|(v, (runs, solved))| VariantSummary {
            variant: v.into(),
            runs,
            successes: solved.len(),
            success_rate: if runs > 0 { solved.len() as f64 / runs as f64 } else { 0.0 },
            solved_path: solved.values().sum(),
        })
        .collect()
}

/// Total path length of `a` over total path length of `b`, both summed over
/// the problems that both variants solved. Returns the ratio and the number
/// of common problems, or `None` when there are none.
pub fn duration_ratio(records: &[RunRecord], a: &str, b: &str) -> Option<(f64, usize)> {
    let solved = |v: &str| -> BTreeMap<(&str, u64), f64> {
        records
            .iter()
            .filter(|r| r.variant == v && r.success)
            .map(|r| (r.problem(), r.path_length))
            .collect()
    };
    let (sa, sb) = (solved(a), solved(b));
    let mut ta = 0.0;
    let mut tb = 0.0;
    let mut n = 0;
    for (k, la) in &sa {
        if let Some(lb) = sb.get(k) {
            ta += la;
            tb += lb;
            n += 1;
        }
    }
    (n > 0 && tb > 0.0).then_some((ta / tb, n))
}

/// Corridor fixture for timing the planner against the obstacle count: a
/// 55-step LOS problem between two rows of covering circles along a 60 m
/// corridor with a slight bend.
pub fn corridor_problem(n_obstacles: usize) -> PlanningProblem {
    let per_row = (n_obstacles / 2).max(1);
    let offset = Point::new(0.0, -60.0);
    let obstacles = (0..n_obstacles)
        .map(|i| {
            let x = -5.0 + 60.0 * (i / 2) as f64 / per_row as f64;
            let y = if i % 2 == 0 { 6.0 } else { -6.0 } + 0.05 * x;
            Circle {
                center: Point::new(x, y) + offset,
                radius: 0.8,
            }
        })
        .collect();
    PlanningProblem {
        b0: BeliefState {
            mean: DVector::from_column_slice(offset.as_slice()),
            cov: DMatrix::identity(2, 2) * 0.5,
        },
        goal: Point::new(45.0, 2.25) + offset,
        weights: CostWeights::isotropic(2, 50.0, 0.01, 1.0),
        obstacles: ObstacleSet {
            obstacles,
            r_rob: 0.3,
            n_std: 3.0,
        },
        u_lo: Vector2::new(-1.0, -1.0),
        u_hi: Vector2::new(1.0, 1.0),
        horizon: 55,
    }
}

/// Three-obstacle planning study: start at the origin, goal 100 m along x,
/// transponder at (0, 110) behind the line of reflection y = 100 (NLOS) or
/// seen directly (LOS), three obstacles of radius 5 near the straight path.
/// Returns the model, the problem and the offset from map to state
/// coordinates (the LOS state is relative to the transponder).
pub fn three_obstacle_problem(nlos: bool, t: f64) -> (AoaModel, PlanningProblem, Point) {
    let tx = Point::new(0.0, 110.0);
    let noise = NoiseConfig {
        sigma_alpha: 0.0035,
        ..NoiseConfig::default()
    };
    let (model, mean, off) = if nlos {
        let m = AoaModel::new(
            ModelVariant::NlosKnownLor {
                lor: LineOfReflection::new(0.0, 100.0),
            },
            &noise,
        );
        (m, DVector::from_vec(vec![0.0, 0.0, 0.0, 90.0]), Point::zeros())
    } else {
        (AoaModel::new(ModelVariant::Los, &noise), DVector::from_vec(vec![-tx.x, -tx.y]), -tx)
    };
    let l = mean.len();
    let obstacles = ObstacleSet {
        obstacles: [(20.0, 1.0), (50.0, -1.0), (80.0, 1.5)]
            .iter()
            .map(|&(x, y)| Circle {
                center: Point::new(x, y) + off,
                radius: 5.0,
            })
            .collect(),
        r_rob: 0.5,
        n_std: 3.0,
    };
    let problem = PlanningProblem {
        b0: BeliefState {
            mean,
            cov: DMatrix::identity(l, l) * 0.1,
        },
        goal: Point::new(100.0, 0.0) + off,
        weights: CostWeights::isotropic(l, 50.0, 0.01, t),
        obstacles,
        u_lo: Vector2::new(-1.0, -1.0),
        u_hi: Vector2::new(1.0, 1.0),
        horizon: 100,
    };
    (model, problem, off)
}
