//! Ground-truth 2D world: specular ray tracing from the transponder to the
//! robot, link-state classification, noisy AoA measurements and the robot's
//! single-integrator kinematics.
//!
//! Reflected paths are found with the image method. At construction the
//! environment builds a beam tree: each node is a virtual source (the
//! transponder mirrored across a wall sequence) together with the visible
//! aperture on the last wall. A robot position is tested against the beams,
//! candidate paths are reconstructed by back-tracing through the images and
//! then checked for occlusion and specular validity.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use crate::geometry::{self, line_params, point_segment_distance, reflect_point, side, Bounds, Point};
use crate::{Error, Result};

/// Default maximum number of reflections considered by the tracer.
pub const DEFAULT_MAX_ORDER: usize = 3;

/// Wall id used when a misclassified link state has to invent a reflection.
pub const UNKNOWN_WALL: usize = usize::MAX;

/// A reflecting (and occluding) wall.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WallSegment {
    pub a: Point,
    pub b: Point,
    pub id: usize,
}

impl WallSegment {
    pub fn new(a: Point, b: Point, id: usize) -> Self {
        Self { a, b, id }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

/// Circular obstacle; occludes the signal and the robot but does not reflect.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

/// Classification of the received signal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LinkState {
    Los,
    /// Reflected path; `walls` lists the reflecting wall ids from the
    /// transponder towards the robot, so its length is the order.
    Nlos { walls: Vec<usize> },
    NoSignal,
}

impl LinkState {
    /// Number of reflections (0 for LOS), `None` when there is no signal.
    pub fn order(&self) -> Option<usize> {
        match self {
            LinkState::Los => Some(0),
            LinkState::Nlos { walls } => Some(walls.len()),
            LinkState::NoSignal => None,
        }
    }
}

/// Angle of arrival: direction from the robot towards the apparent source.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AoAMeasurement {
    /// Radians in `(-pi, pi]`.
    pub alpha: f64,
    pub link: LinkState,
    /// `[cos(alpha), sin(alpha)]`.
    pub unit: Point,
}

impl AoAMeasurement {
    pub fn new(alpha: f64, link: LinkState) -> Self {
        let alpha = geometry::wrap_angle(alpha);
        Self {
            alpha,
            link,
            unit: geometry::unit(alpha),
        }
    }
}

/// A valid transmitter→robot path.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPath {
    /// `[tx, r_1, .., r_k, robot]`.
    pub points: Vec<Point>,
    /// Reflecting wall ids, transponder side first.
    pub walls: Vec<usize>,
    pub length: f64,
}

impl SignalPath {
    pub fn order(&self) -> usize {
        self.walls.len()
    }

    /// Last point before the robot: the final reflection point, or the
    /// transponder for a direct path.
    pub fn apparent_source(&self) -> Point {
        self.points[self.points.len() - 2]
    }

    pub fn link(&self) -> LinkState {
        if self.walls.is_empty() {
            LinkState::Los
        } else {
            LinkState::Nlos {
                walls: self.walls.clone(),
            }
        }
    }

    pub fn measurement(&self) -> AoAMeasurement {
        let robot = self.points[self.points.len() - 1];
        let d = self.apparent_source() - robot;
        AoAMeasurement::new(d.y.atan2(d.x), self.link())
    }
}

#[derive(Debug, Clone)]
struct Beam {
    parent: Option<usize>,
    /// Index into `Environment::walls`.
    wall: usize,
    image: Point,
    planes: [HalfPlane; 3],
}

/// Immutable world description.
#[derive(Debug, Clone)]
pub struct Environment {
    pub walls: Vec<WallSegment>,
    pub obstacles: Vec<Circle>,
    pub tx: Point,
    pub bounds: Bounds,
    max_order: usize,
    beams: Vec<Beam>,
}

const PARAM_EPS: f64 = 1e-9;
const SEGMENT_EPS: f64 = 1e-12;

impl Environment {
    pub fn new(walls: Vec<WallSegment>, obstacles: Vec<Circle>, tx: Point, bounds: Bounds) -> Result<Self> {
        Self::with_max_order(walls, obstacles, tx, bounds, DEFAULT_MAX_ORDER)
    }

    pub fn with_max_order(
        walls: Vec<WallSegment>,
        obstacles: Vec<Circle>,
        tx: Point,
        bounds: Bounds,
        max_order: usize,
    ) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Config("environment bounds are empty".into()));
        }
        if !bounds.contains(&tx) {
            return Err(Error::Config("transponder outside bounds".into()));
        }
        for (i, w) in walls.iter().enumerate() {
            if !(w.length() > 0.0) {
                return Err(Error::Config(alloc::format!("wall {} has zero length", w.id)));
            }
            if walls[..i].iter().any(|o| o.id == w.id) {
                return Err(Error::Config(alloc::format!("duplicate wall id {}", w.id)));
            }
        }
        if let Some(o) = obstacles.iter().find(|o| !(o.radius > 0.0)) {
            return Err(Error::Config(alloc::format!("obstacle radius {} not positive", o.radius)));
        }
        let mut env = Self {
            walls,
            obstacles,
            tx,
            bounds,
            max_order,
            beams: Vec::new(),
        };
        env.build_beams();
        Ok(env)
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn wall_by_id(&self, id: usize) -> Option<&WallSegment> {
        self.walls.iter().find(|w| w.id == id)
    }

    fn build_beams(&mut self) {
        let mut frontier: Vec<usize> = Vec::new();
        for (wi, w) in self.walls.iter().enumerate() {
            if side(&self.tx, &w.a, &w.b).abs() <= 1e-12 * w.length() {
                continue;
            }
            let image = reflect_point(&self.tx, &w.a, &w.b);
            self.beams.push(Beam {
                parent: None,
                wall: wi,
                image,
                planes: beam_planes(image, (w.a, w.b)),
            });
            frontier.push(self.beams.len() - 1);
        }
        for _ in 1..self.max_order {
            let mut next = Vec::new();
            for &bi in &frontier {
                let beam = self.beams[bi].clone();
                for (wi, w) in self.walls.iter().enumerate() {
                    if wi == beam.wall {
                        continue;
                    }
                    let Some((a, b)) = clip_to_beam(&beam, w.a, w.b) else {
                        continue;
                    };
                    if side(&beam.image, &w.a, &w.b).abs() <= 1e-12 * w.length() {
                        continue;
                    }
                    let image = reflect_point(&beam.image, &w.a, &w.b);
                    self.beams.push(Beam {
                        parent: Some(bi),
                        wall: wi,
                        image,
                        planes: beam_planes(image, (a, b)),
                    });
                    next.push(self.beams.len() - 1);
                }
            }
            frontier = next;
        }
    }

    /// True when the open segment `a→b` is not blocked by any wall or obstacle.
    pub fn segment_clear(&self, a: &Point, b: &Point) -> bool {
        for w in &self.walls {
            if let Some((t, s)) = line_params(a, b, &w.a, &w.b) {
                if t > PARAM_EPS && t < 1.0 - PARAM_EPS && s >= -SEGMENT_EPS && s <= 1.0 + SEGMENT_EPS {
                    return false;
                }
            }
        }
        self.obstacles
            .iter()
            .all(|o| point_segment_distance(&o.center, a, b) >= o.radius)
    }

    /// Shortest valid path from the transponder to `p`, if any.
    pub fn trace_path(&self, p: &Point) -> Result<Option<SignalPath>> {
        if !self.bounds.contains(p) {
            return Err(Error::Config("robot position outside environment bounds".into()));
        }
        let mut best: Option<SignalPath> = None;
        if (p - self.tx).norm() > 0.0 && self.segment_clear(&self.tx, p) {
            best = Some(SignalPath {
                points: vec![self.tx, *p],
                walls: Vec::new(),
                length: (p - self.tx).norm(),
            });
        }
        // Beams are stored breadth-first, so lower orders are visited first
        // and keep ties.
        for (bi, beam) in self.beams.iter().enumerate() {
            if !point_in_beam(beam, p) {
                continue;
            }
            let Some(path) = self.backtrace(bi, p) else {
                continue;
            };
            let better = match &best {
                None => true,
                Some(b) => path.length < b.length - 1e-9,
            };
            if better {
                best = Some(path);
            }
        }
        Ok(best)
    }

    fn backtrace(&self, leaf: usize, p: &Point) -> Option<SignalPath> {
        let mut chain = Vec::new();
        let mut cur = Some(leaf);
        while let Some(bi) = cur {
            chain.push(bi);
            cur = self.beams[bi].parent;
        }
        // chain is robot side first
        let mut points = vec![*p];
        let mut q = *p;
        for &bi in &chain {
            let beam = &self.beams[bi];
            let w = &self.walls[beam.wall];
            let (t, s) = line_params(&q, &beam.image, &w.a, &w.b)?;
            // a hit on a wall end is a corner, which has no specular direction
            if !(t > PARAM_EPS && t < 1.0 - PARAM_EPS) || s <= PARAM_EPS || s >= 1.0 - PARAM_EPS {
                return None;
            }
            q += (beam.image - q) * t;
            points.push(q);
        }
        points.push(self.tx);
        points.reverse();
        let walls: Vec<usize> = chain.iter().rev().map(|&bi| self.walls[self.beams[bi].wall].id).collect();
        let wall_idx: Vec<usize> = chain.iter().rev().map(|&bi| self.beams[bi].wall).collect();

        // Specular validity: both neighbours strictly on the same side of the wall.
        for (j, &wi) in wall_idx.iter().enumerate() {
            let w = &self.walls[wi];
            let s_prev = side(&points[j], &w.a, &w.b);
            let s_next = side(&points[j + 2], &w.a, &w.b);
            if !(s_prev * s_next > 0.0) {
                return None;
            }
        }
        if !points.windows(2).all(|leg| self.segment_clear(&leg[0], &leg[1])) {
            return None;
        }
        let length = points.windows(2).map(|leg| (leg[1] - leg[0]).norm()).sum();
        Some(SignalPath { points, walls, length })
    }
}

fn point_in_beam(beam: &Beam, x: &Point) -> bool {
    beam.planes.iter().all(|h| h.eval(x) >= -1e-9)
}

/// `normal · (x - origin) >= 0` inside; normals are unit length.
#[derive(Debug, Clone, Copy)]
struct HalfPlane {
    origin: Point,
    normal: Point,
}

impl HalfPlane {
    /// Half-plane on the side of the line `a→b` where `sign * side(x, a, b) > 0`.
    fn from_line(a: Point, b: Point, sign: f64) -> Self {
        let d = (b - a).normalize();
        Self {
            origin: a,
            normal: Point::new(-d.y, d.x) * sign,
        }
    }

    #[inline]
    fn eval(&self, x: &Point) -> f64 {
        self.normal.dot(&(x - self.origin))
    }
}

/// Half-planes bounding the region lit through `aperture` by a source at `image`.
fn beam_planes(image: Point, aperture: (Point, Point)) -> [HalfPlane; 3] {
    let (e1, e2) = aperture;
    [
        HalfPlane::from_line(e1, e2, -side(&image, &e1, &e2).signum()),
        HalfPlane::from_line(image, e1, side(&e2, &image, &e1).signum()),
        HalfPlane::from_line(image, e2, side(&e1, &image, &e2).signum()),
    ]
}

/// Portion of the segment `a→b` inside the beam, if longer than a few nanometers.
fn clip_to_beam(beam: &Beam, a: Point, b: Point) -> Option<(Point, Point)> {
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for h in &beam.planes {
        let fa = h.eval(&a) + 1e-9;
        let fb = h.eval(&b) + 1e-9;
        if fa < 0.0 && fb < 0.0 {
            return None;
        }
        if fa < 0.0 {
            t0 = t0.max(fa / (fa - fb));
        } else if fb < 0.0 {
            t1 = t1.min(fa / (fa - fb));
        }
    }
    if t1 - t0 <= 1e-12 {
        return None;
    }
    let d = b - a;
    Some((a + d * t0, a + d * t1))
}

/// Noise-free AoA at `p`, or `None` when no path reaches the robot.
pub fn trace_signal(env: &Environment, p: &Point) -> Result<Option<AoAMeasurement>> {
    Ok(env.trace_path(p)?.map(|path| path.measurement()))
}

/// Adds `sigma * w`, `w ~ N(0, 1)`, to the angle and, with probability
/// `p_mis`, perturbs the reported reflection order by one.
pub fn corrupt_measurement<R: Rng + ?Sized>(m: &AoAMeasurement, sigma: f64, p_mis: f64, rng: &mut R) -> AoAMeasurement {
    let w: f64 = StandardNormal.sample(rng);
    let mut link = m.link.clone();
    if p_mis > 0.0 && rng.random::<f64>() < p_mis {
        let up = rng.random::<bool>();
        link = match link {
            LinkState::Los => LinkState::Nlos {
                walls: vec![UNKNOWN_WALL],
            },
            LinkState::Nlos { mut walls } => {
                if up {
                    walls.push(UNKNOWN_WALL);
                    LinkState::Nlos { walls }
                } else if walls.len() == 1 {
                    LinkState::Los
                } else {
                    walls.pop();
                    LinkState::Nlos { walls }
                }
            }
            LinkState::NoSignal => LinkState::NoSignal,
        };
    }
    AoAMeasurement::new(m.alpha + sigma * w, link)
}

/// Single-integrator step `p + u`, rejecting controls outside `‖u‖∞ ≤ u_max`.
pub fn step_robot(p: &Point, u: &Point, u_max: f64) -> Result<Point> {
    let value = u.amax();
    if !(value <= u_max * (1.0 + 1e-12)) {
        return Err(Error::ControlBound { value, bound: u_max });
    }
    Ok(p + u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn open_bounds() -> Bounds {
        Bounds::new(Point::new(-200.0, -200.0), Point::new(200.0, 200.0))
    }

    #[test]
    fn direct_path_points_back_to_source() {
        let env = Environment::new(vec![], vec![], Point::new(0.0, 0.0), open_bounds()).unwrap();
        let m = trace_signal(&env, &Point::new(3.0, 4.0)).unwrap().unwrap();
        assert_eq!(m.link, LinkState::Los);
        assert!((m.alpha - (-4.0f64).atan2(-3.0)).abs() < 1e-15);
        assert!((m.unit.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_mirror_reflection() {
        let walls = vec![
            WallSegment::new(Point::new(-10.0, 0.0), Point::new(10.0, 0.0), 0),
            // occluder between transponder and robot
            WallSegment::new(Point::new(0.0, 0.5), Point::new(0.0, 3.0), 1),
        ];
        let env = Environment::new(walls, vec![], Point::new(-1.0, 1.0), open_bounds()).unwrap();
        let path = env.trace_path(&Point::new(1.0, 1.0)).unwrap().unwrap();
        assert_eq!(path.walls, vec![0]);
        assert!((path.points[1] - Point::new(0.0, 0.0)).norm() < 1e-12);
        let m = path.measurement();
        assert!((m.alpha - (-3.0 * PI / 4.0)).abs() < 1e-12);
        assert_eq!(m.link.order(), Some(1));
    }

    #[test]
    fn blocked_everywhere_is_no_signal() {
        // Transponder boxed in by four walls, robot outside.
        let w = |a: (f64, f64), b: (f64, f64), id| WallSegment::new(Point::new(a.0, a.1), Point::new(b.0, b.1), id);
        let walls = vec![
            w((-1.0, -1.0), (1.0, -1.0), 0),
            w((1.0, -1.0), (1.0, 1.0), 1),
            w((1.0, 1.0), (-1.0, 1.0), 2),
            w((-1.0, 1.0), (-1.0, -1.0), 3),
        ];
        let env = Environment::new(walls, vec![], Point::new(0.0, 0.0), open_bounds()).unwrap();
        assert!(trace_signal(&env, &Point::new(5.0, 5.0)).unwrap().is_none());
    }

    #[test]
    fn straight_through_is_not_a_reflection() {
        // Transponder and robot on opposite sides of the only wall: the
        // collinear crossing point satisfies the equal-angle equation but is
        // not a specular reflection.
        let walls = vec![WallSegment::new(Point::new(-100.0, 100.0), Point::new(100.0, 100.0), 0)];
        let env = Environment::new(walls, vec![], Point::new(0.0, 110.0), open_bounds()).unwrap();
        assert!(trace_signal(&env, &Point::new(50.0, 0.0)).unwrap().is_none());
    }

    #[test]
    fn shortest_path_wins() {
        let walls = vec![WallSegment::new(Point::new(-50.0, -5.0), Point::new(50.0, -5.0), 7)];
        let env = Environment::new(walls, vec![], Point::new(0.0, 0.0), open_bounds()).unwrap();
        let path = env.trace_path(&Point::new(10.0, 0.0)).unwrap().unwrap();
        assert_eq!(path.order(), 0);
    }

    #[test]
    fn obstacle_blocks_direct_path() {
        let walls = vec![WallSegment::new(Point::new(-50.0, -5.0), Point::new(50.0, -5.0), 7)];
        let obstacles = vec![Circle {
            center: Point::new(5.0, 0.0),
            radius: 1.0,
        }];
        let env = Environment::new(walls, obstacles, Point::new(0.0, 0.0), open_bounds()).unwrap();
        let path = env.trace_path(&Point::new(10.0, 0.0)).unwrap().unwrap();
        assert_eq!(path.walls, vec![7]);
    }

    #[test]
    fn configuration_errors() {
        let empty = Bounds::new(Point::new(0.0, 0.0), Point::new(0.0, 1.0));
        assert!(matches!(
            Environment::new(vec![], vec![], Point::new(0.0, 0.0), empty),
            Err(Error::Config(_))
        ));
        let outside = Environment::new(vec![], vec![], Point::new(500.0, 0.0), open_bounds());
        assert!(matches!(outside, Err(Error::Config(_))));
        let dup = vec![
            WallSegment::new(Point::new(0.0, 0.0), Point::new(1.0, 0.0), 1),
            WallSegment::new(Point::new(0.0, 1.0), Point::new(1.0, 1.0), 1),
        ];
        assert!(Environment::new(dup, vec![], Point::new(5.0, 5.0), open_bounds()).is_err());
        let env = Environment::new(vec![], vec![], Point::new(0.0, 0.0), open_bounds()).unwrap();
        assert!(trace_signal(&env, &Point::new(1000.0, 0.0)).is_err());
    }

    #[test]
    fn corruption_with_zero_sigma_is_identity() {
        let m = AoAMeasurement::new(0.7, LinkState::Los);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(corrupt_measurement(&m, 0.0, 0.0, &mut rng), m);
    }

    #[test]
    fn corruption_replays_with_same_seed() {
        let m = AoAMeasurement::new(-2.0, LinkState::Nlos { walls: vec![4] });
        let a = corrupt_measurement(&m, 0.05, 0.0, &mut ChaCha8Rng::seed_from_u64(11));
        let b = corrupt_measurement(&m, 0.05, 0.0, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        assert_ne!(a.alpha, m.alpha);
        assert_eq!(a.link, m.link);
    }

    #[test]
    fn corruption_spread_matches_sigma() {
        let m = AoAMeasurement::new(0.3, LinkState::Los);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let diffs: Vec<f64> = (0..n)
            .map(|_| geometry::wrap_angle(corrupt_measurement(&m, 0.35, 0.0, &mut rng).alpha - m.alpha))
            .collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt();
        assert!((0.33..=0.37).contains(&sd), "sd = {sd}");
    }

    #[test]
    fn misclassification_changes_order_by_one() {
        let m = AoAMeasurement::new(0.0, LinkState::Nlos { walls: vec![1, 2] });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let c = corrupt_measurement(&m, 0.0, 1.0, &mut rng);
            let o = c.link.order().unwrap();
            assert!(o == 1 || o == 3);
        }
    }

    #[test]
    fn robot_steps() {
        let p = step_robot(&Point::new(0.0, 0.0), &Point::new(1.0, 0.0), 1.0).unwrap();
        assert_eq!(p, Point::new(1.0, 0.0));
        let p = step_robot(&Point::new(2.0, 3.0), &Point::new(0.0, 0.0), 1.0).unwrap();
        assert_eq!(p, Point::new(2.0, 3.0));
        let p = step_robot(&Point::new(0.0, 0.0), &Point::new(0.7, -0.7), 1.0).unwrap();
        assert_eq!(p, Point::new(0.7, -0.7));
        assert!(matches!(
            step_robot(&Point::new(0.0, 0.0), &Point::new(1.5, 0.0), 1.0),
            Err(Error::ControlBound { .. })
        ));
    }
}
