//! Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
//!
//! Criteria listed in `EXPECTED_FAILURES` are known not to be met by this
//! implementation; they are still computed and reported. The target exits
//! with an error when any other criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::Path;
use std::time::Instant;

use aoa_nav::checks::{gradient_check, gradient_timing, log_log_slope};
use aoa_nav::suite::{run_suite, SuiteSpec, Variant};
use aoa_nav_core::bench::{corridor_problem, duration_ratio, summarize, three_obstacle_problem};
use aoa_nav_core::geometry::{wrap_angle, Bounds};
use aoa_nav_core::identification::{known_lor_identification, los_identification, IdentificationConfig};
use aoa_nav_core::mapping::{cluster_walls, MapConfig, PointCloud2D};
use aoa_nav_core::mission::ControllerConfig;
use aoa_nav_core::models::{AoaModel, LineOfReflection, ModelVariant, NoiseConfig};
use aoa_nav_core::planner::{solve, solve_multistart, SolverSettings};
use aoa_nav_core::world::{trace_signal, Circle, Environment, LinkState, WallSegment};
use aoa_nav_core::Point;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::fixtures::{corner, corner_fixture, majority, tls_std, CORNER_POINTS, CORNER_SIGMA};
use support::paths::{brute_force_trace, random_scene};

/// Criteria this implementation does not meet; see the README results.
const EXPECTED_FAILURES: &[usize] = &[2, 3, 7, 9];

// criterion 1
const GRAD_DRAWS: usize = 100;
const GRAD_TOL: f64 = 1e-5;
const GRAD_SECONDS: f64 = 30.0;
// criterion 2
const TIMING_LS: [usize; 3] = [4, 8, 12];
const ANALYTIC_SLOPE_MAX: f64 = 4.6;
const FD_SLOPE_MIN: f64 = 5.4;
// criteria 3 and 4
const SEEDS: u64 = 50;
const LOS_FINAL_ERROR: f64 = 1.5;
const LOS_SHARE: f64 = 0.9;
const NLOS_INITIAL_ERROR: f64 = 10.0;
const NLOS_BEARING_DEG: f64 = 3.0;
const NLOS_POSITION_ERROR: f64 = 4.0;
const NLOS_LINE_DISTANCE: f64 = 1.0;
const NLOS_SHARE: f64 = 0.8;
const ID_SECONDS: f64 = 60.0;
// criterion 5
const XI_INITIAL: f64 = 20.0;
const LOS_XI50: (f64, f64) = (2.5, 7.0);
const LOS_XI0: (f64, f64) = (8.0, 14.0);
const NLOS_XI50_REF: f64 = 10.84;
const NLOS_XI0_REF: f64 = 12.51;
const NLOS_REL_TOL: f64 = 0.4;
const CONSTRAINT_TOL: f64 = 1e-4;
const PLAN_SECONDS: f64 = 10.0;
// criterion 6
const CORRIDOR_OBSTACLES: usize = 261;
const CORRIDOR_SECONDS: f64 = 10.0;
const SCALING_RATIO: f64 = 4.0;
// criterion 7
const BENCH_MAPS: usize = 20;
const BENCH_SEEDS: usize = 5;
const BENCH_SIGMA: f64 = 0.35;
const DURATION_VS_FOLLOWER: f64 = 0.9;
const DURATION_T50_VS_T0: f64 = 1.02;
// criterion 8
const SCENES: usize = 100;
const AOA_TOL: f64 = 1e-9;
// criterion 9
const CORNER_TRIALS: u64 = 100;
const PURITY: f64 = 0.95;
const FIT_SIGMAS: f64 = 3.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradients() -> Outcome {
    match gradient_check(GRAD_DRAWS, 0) {
        Ok(r) => outcome(
            r.los_max_rel_error <= GRAD_TOL && r.known_lor_max_rel_error <= GRAD_TOL && r.seconds < GRAD_SECONDS,
            format!(
                "{} draws, max rel error LOS {:.1e} / known-LOR {:.1e} (tol {GRAD_TOL:.0e}), {:.2} s (limit {GRAD_SECONDS} s)",
                r.draws, r.los_max_rel_error, r.known_lor_max_rel_error, r.seconds
            ),
        ),
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn complexity() -> Outcome {
    let rows = match gradient_timing(&TIMING_LS, 0.2) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let ls: Vec<f64> = rows.iter().map(|r| r.l as f64).collect();
    let a: Vec<f64> = rows.iter().map(|r| r.analytic_seconds).collect();
    let f: Vec<f64> = rows.iter().map(|r| r.fd_seconds).collect();
    let (sa, sf) = (log_log_slope(&ls, &a), log_log_slope(&ls, &f));
    let last = rows.last().expect("three sizes");
    outcome(
        sa <= ANALYTIC_SLOPE_MAX && sf >= FD_SLOPE_MIN && last.analytic_seconds < last.fd_seconds,
        format!(
            "log-log slope analytic {sa:.2} (max {ANALYTIC_SLOPE_MAX}), finite differences {sf:.2} (min {FD_SLOPE_MIN}); l=12 analytic {:.1e} s vs {:.1e} s",
            last.analytic_seconds, last.fd_seconds
        ),
    )
}

fn los_convergence() -> Outcome {
    let start = Instant::now();
    let cfg = IdentificationConfig::default();
    let mut good = 0;
    let mut errors = Vec::new();
    for seed in 0..SEEDS {
        match los_identification(&cfg, seed) {
            Ok(r) => {
                let e = r.final_error();
                good += usize::from(e <= LOS_FINAL_ERROR);
                errors.push(e);
            }
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
    }
    errors.sort_by(f64::total_cmp);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        good as f64 >= LOS_SHARE * SEEDS as f64 && secs < ID_SECONDS,
        format!(
            "{good}/{SEEDS} seeds end within {LOS_FINAL_ERROR} m after {} steps (need {:.0}%), median final error {:.2} m, {secs:.1} s",
            cfg.steps,
            100.0 * LOS_SHARE,
            errors[errors.len() / 2]
        ),
    )
}

fn nlos_convergence() -> Outcome {
    let start = Instant::now();
    let cfg = IdentificationConfig {
        initial_error: NLOS_INITIAL_ERROR,
        ..Default::default()
    };
    let (mut good, mut on_line) = (0, 0);
    for seed in 0..SEEDS {
        let r = match known_lor_identification(&cfg, seed) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        };
        let (Some(por), Some(truth), Some(est)) = (r.final_por, r.truth.last(), r.estimate.last()) else {
            return outcome(false, format!("seed {seed}: empty run"));
        };
        let (dt, de) = (truth - por, est - por);
        let bearing = wrap_angle(de.y.atan2(de.x) - dt.y.atan2(dt.x)).abs().to_degrees();
        let line_dist = (dt.x * de.y - dt.y * de.x).abs() / dt.norm();
        good += usize::from(bearing <= NLOS_BEARING_DEG && (truth - est).norm() <= NLOS_POSITION_ERROR);
        on_line += usize::from(line_dist <= NLOS_LINE_DISTANCE);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        good as f64 >= NLOS_SHARE * SEEDS as f64 && on_line as u64 == SEEDS && secs < ID_SECONDS,
        format!(
            "{good}/{SEEDS} within {NLOS_BEARING_DEG} deg and {NLOS_POSITION_ERROR} m (need {:.0}%), {on_line}/{SEEDS} within {NLOS_LINE_DISTANCE} m of the robot-POR line, {secs:.1} s",
            100.0 * NLOS_SHARE
        ),
    )
}

fn uncertainty_reduction() -> Outcome {
    let settings = SolverSettings::default();
    let mut xi = [[0.0; 2]; 2];
    let mut worst_violation = 0.0f64;
    let mut slowest = 0.0f64;
    for (i, nlos) in [false, true].into_iter().enumerate() {
        for (j, t) in [50.0, 0.0].into_iter().enumerate() {
            let (model, problem, _) = three_obstacle_problem(nlos, t);
            let sol = match solve_multistart(&model, &problem, &settings) {
                Ok(s) => s,
                Err(e) => return outcome(false, format!("nlos={nlos} T={t}: {e}")),
            };
            xi[i][j] = sol.position_trace_sum();
            worst_violation = worst_violation.max(sol.max_constraint_violation);
            slowest = slowest.max(sol.wall_time);
        }
    }
    let [[l50, l0], [n50, n0]] = xi;
    let within = |v: f64, r: f64| (v - r).abs() <= NLOS_REL_TOL * r;
    let ordering = l50 < l0 && l0 < XI_INITIAL && n50 < n0 && n0 < XI_INITIAL;
    let ranges = (LOS_XI50.0..=LOS_XI50.1).contains(&l50)
        && (LOS_XI0.0..=LOS_XI0.1).contains(&l0)
        && within(n50, NLOS_XI50_REF)
        && within(n0, NLOS_XI0_REF);
    outcome(
        ordering && ranges && worst_violation <= CONSTRAINT_TOL && slowest < PLAN_SECONDS,
        format!(
            "LOS xi {l50:.2} / {l0:.2}, NLOS xi {n50:.2} / {n0:.2} (T=50I / T=0, initial {XI_INITIAL}), max violation {worst_violation:.1e}, slowest multistart {slowest:.2} s"
        ),
    )
}

fn best_time(n: usize, model: &AoaModel) -> Result<(f64, bool, usize), String> {
    let problem = corridor_problem(n);
    let mut best = (f64::INFINITY, false, 0);
    for _ in 0..3 {
        let sol = solve(model, &problem, &SolverSettings::default()).map_err(|e| e.to_string())?;
        if sol.wall_time < best.0 {
            best = (sol.wall_time, sol.converged, sol.iterations);
        }
    }
    Ok(best)
}

fn obstacle_scaling() -> Outcome {
    let model = AoaModel::new(ModelVariant::Los, &NoiseConfig::default());
    let run = || -> Result<Outcome, String> {
        let (t261, conv, iters) = best_time(CORRIDOR_OBSTACLES, &model)?;
        let (t30, ..) = best_time(30, &model)?;
        let (t300, ..) = best_time(300, &model)?;
        Ok(outcome(
            conv && t261 < CORRIDOR_SECONDS && t300 <= SCALING_RATIO * t30,
            format!(
                "{CORRIDOR_OBSTACLES} obstacles: converged={conv} in {iters} iterations, {t261:.2} s (limit {CORRIDOR_SECONDS} s); time(300)/time(30) = {:.2} (max {SCALING_RATIO})",
                t300 / t30
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, format!("error: {e}")))
}

fn closed_loop() -> Outcome {
    let start = Instant::now();
    let spec = SuiteSpec::procedural(BENCH_MAPS, BENCH_SEEDS, BENCH_SIGMA);
    let scenarios = match spec.scenarios(Path::new(".")) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let variants = [Variant::EkfT50, Variant::EkfT0, Variant::AoaFollower];
    let out = run_suite(&scenarios, spec.seeds, &variants, &ControllerConfig::default());
    let summary = summarize(&out.records, None);
    let rate = |v: Variant| summary.iter().find(|s| s.variant == v.name()).map_or(0.0, |s| s.success_rate);
    let follower = Variant::AoaFollower.name();
    let ratio = |a: Variant, b: &str| duration_ratio(&out.records, a.name(), b).map_or(f64::INFINITY, |r| r.0);
    let (r50, r0) = (ratio(Variant::EkfT50, follower), ratio(Variant::EkfT0, follower));
    let r50_0 = ratio(Variant::EkfT50, Variant::EkfT0.name());
    let (s50, s0, sf) = (rate(Variant::EkfT50), rate(Variant::EkfT0), rate(Variant::AoaFollower));
    outcome(
        out.errors.is_empty()
            && s50 >= sf
            && s0 >= sf
            && r50 <= DURATION_VS_FOLLOWER
            && r0 <= DURATION_VS_FOLLOWER
            && r50_0 <= DURATION_T50_VS_T0,
        format!(
            "success T50 {:.0}% / T0 {:.0}% / follower {:.0}%; duration vs follower T50 {r50:.2}, T0 {r0:.2} (max {DURATION_VS_FOLLOWER}); T50/T0 {r50_0:.3} (max {DURATION_T50_VS_T0}); {} mission errors, {:.0} s",
            100.0 * s50,
            100.0 * s0,
            100.0 * sf,
            out.errors.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn geometry_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bounds = Bounds::new(Point::new(-300.0, -300.0), Point::new(300.0, 300.0));
    let (mut agree, mut reflected, mut worst) = (0, 0, 0.0f64);
    let mut first_bad = None;
    for case in 0..SCENES {
        let (walls, circles, tx, rx) = random_scene(&mut rng);
        let env = Environment::new(
            walls.iter().map(|w| WallSegment::new(w.a, w.b, w.id)).collect(),
            circles.iter().map(|c| Circle { center: c.c, radius: c.r }).collect(),
            tx,
            bounds,
        );
        let fast = env.and_then(|env| trace_signal(&env, &rx));
        let brute = brute_force_trace(tx, rx, &walls, &circles, 3);
        let ok = match (&fast, &brute) {
            (Ok(None), None) => true,
            (Ok(Some(m)), Some(b)) => {
                let link = if b.walls.is_empty() { LinkState::Los } else { LinkState::Nlos { walls: b.walls.clone() } };
                let da = wrap_angle(m.alpha - b.aoa()).abs();
                worst = worst.max(da);
                reflected += usize::from(!b.walls.is_empty());
                m.link == link && da <= AOA_TOL
            }
            _ => false,
        };
        agree += usize::from(ok);
        if !ok && first_bad.is_none() {
            first_bad = Some(case);
        }
    }
    outcome(
        agree == SCENES,
        format!(
            "{agree}/{SCENES} environments agree ({reflected} reflected links), max AoA difference {worst:.1e} rad (tol {AOA_TOL:.0e}){}",
            first_bad.map_or(String::new(), |c| format!(", first mismatch case {c}"))
        ),
    )
}

fn clustering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth: Vec<LineOfReflection> = (0..3).map(|w| LineOfReflection::through(&corner(w), &corner(w + 1)).expect("distinct corners")).collect();
    let (mut clustered, mut fitted) = (0, 0);
    let mut zs = Vec::new();
    for trial in 0..CORNER_TRIALS {
        let (pts, labels) = corner_fixture(&mut rng);
        let cfg = MapConfig { seed: trial, ..MapConfig::default() };
        let walls = match PointCloud2D::new(pts).and_then(|pc| cluster_walls(&pc, &cfg)) {
            Ok(w) => w,
            Err(e) => return outcome(false, format!("trial {trial}: {e}")),
        };
        let majorities: Vec<(usize, f64)> = walls.iter().map(|w| majority(&w.members, &labels)).collect();
        let mut seen: Vec<usize> = majorities.iter().map(|m| m.0).collect();
        seen.sort_unstable();
        if walls.len() != 3 || seen != [0, 1, 2] || majorities.iter().any(|m| m.1 < PURITY) {
            continue;
        }
        clustered += 1;
        let mut fit_ok = true;
        for (w, &(label, _)) in walls.iter().zip(&majorities) {
            let t = &truth[label];
            let (x0, x1) = (t.to_frame(&corner(label)).x, t.to_frame(&corner(label + 1)).x);
            let (sd_m, sd_c) = tls_std(t.m, x0.min(x1), x0.max(x1), CORNER_POINTS, CORNER_SIGMA);
            if w.lor.rotated != t.rotated {
                fit_ok = false;
                continue;
            }
            let (zm, zc) = ((w.lor.m - t.m) / sd_m, (w.lor.c - t.c) / sd_c);
            zs.extend([zm, zc]);
            fit_ok &= zm.abs() <= FIT_SIGMAS && zc.abs() <= FIT_SIGMAS;
        }
        fitted += usize::from(fit_ok);
    }
    // calibration of the standardized errors, for reading a failure
    let worst = zs.iter().fold(0.0f64, |a, z| a.max(z.abs()));
    let outside = zs.iter().filter(|z| z.abs() > FIT_SIGMAS).count();
    let rms = (zs.iter().map(|z| z * z).sum::<f64>() / zs.len().max(1) as f64).sqrt();
    outcome(
        clustered as u64 == CORNER_TRIALS && fitted as u64 == CORNER_TRIALS,
        format!(
            "{clustered}/{CORNER_TRIALS} trials give 3 clusters at >= {:.0}% purity, {fitted}/{CORNER_TRIALS} with every (m, c) within {FIT_SIGMAS} sigma; {outside}/{} standardized errors outside (worst {worst:.2}), RMS {rms:.2}",
            100.0 * PURITY,
            zs.len()
        ),
    )
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "covariance gradients match finite differences", gradients),
        (2, "gradient cost growth", complexity),
        (3, "LOS filter convergence", los_convergence),
        (4, "known-LOR filter convergence", nlos_convergence),
        (5, "planner uncertainty reduction", uncertainty_reduction),
        (6, "planner obstacle scaling", obstacle_scaling),
        (7, "closed-loop benchmark", closed_loop),
        (8, "signal tracer vs brute-force paths", geometry_oracle),
        (9, "three-wall clustering and fits", clustering),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = Vec::new();
    for (k, name, run) in criteria {
        if !only.is_empty() && !only.contains(&k) {
            continue;
        }
        let o = run();
        let expected = EXPECTED_FAILURES.contains(&k);
        let note = match (o.pass, expected) {
            (false, true) => " [known failure]",
            (true, true) => " [listed as a known failure but passed]",
            _ => "",
        };
        println!("[{}] criterion {k}: {name}: {}{note}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass && !expected {
            unexpected.push(k);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected acceptance failures: {unexpected:?}");
        std::process::exit(1);
    }
}
