//! Single planner solves on the three-obstacle study.

use anyhow::Result;
use aoa_nav_core::bench::three_obstacle_problem;
use aoa_nav_core::planner::{solve, solve_multistart, SolverSettings, TrajectorySolution};
use aoa_nav_core::world::Circle;
use aoa_nav_core::Point;
use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanSpec {
    /// Known-LOR NLOS filter instead of LOS.
    pub nlos: bool,
    /// Covariance weight `T = t I`.
    pub t: f64,
    /// Also try the detour initializations and keep the cheapest.
    pub multistart: bool,
    pub settings: SolverSettings,
}

impl Default for PlanSpec {
    fn default() -> Self {
        Self {
            nlos: false,
            t: 50.0,
            multistart: true,
            settings: SolverSettings::default(),
        }
    }
}

/// One planned step in map coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    /// Control applied after this state; zero at the final state.
    pub ux: f64,
    pub uy: f64,
    pub p_xx: f64,
    pub p_xy: f64,
    pub p_yy: f64,
}

pub struct PlanOutcome {
    pub solution: TrajectorySolution,
    pub rows: Vec<PlanRow>,
    /// Obstacles in map coordinates.
    pub obstacles: Vec<Circle>,
    pub goal: Point,
}

impl PlanOutcome {
    pub fn ellipses(&self, every: usize) -> Vec<(Point, Matrix2<f64>)> {
        self.rows
            .iter()
            .filter(|r| r.step % every.max(1) == 0)
            .map(|r| (Point::new(r.x, r.y), Matrix2::new(r.p_xx, r.p_xy, r.p_xy, r.p_yy)))
            .collect()
    }
}

pub fn run_plan(spec: &PlanSpec) -> Result<PlanOutcome> {
    let (model, problem, off) = three_obstacle_problem(spec.nlos, spec.t);
    let solution = if spec.multistart {
        solve_multistart(&model, &problem, &spec.settings)?
    } else {
        solve(&model, &problem, &spec.settings)?
    };
    let rows = solution
        .states
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let p = b.position() - off;
            let c = b.position_cov();
            let u = solution.controls.get(i).map_or(Point::zeros(), |u| Point::new(u[0], u[1]));
            PlanRow {
                step: i,
                x: p.x,
                y: p.y,
                ux: u.x,
                uy: u.y,
                p_xx: c[(0, 0)],
                p_xy: c[(0, 1)],
                p_yy: c[(1, 1)],
            }
        })
        .collect();
    let obstacles = problem
        .obstacles
        .obstacles
        .iter()
        .map(|c| Circle {
            center: c.center - off,
            radius: c.radius,
        })
        .collect();
    Ok(PlanOutcome {
        solution,
        rows,
        obstacles,
        goal: problem.goal - off,
    })
}
