use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use aoa_nav::checks::{gradient_check, gradient_timing, log_log_slope};
use aoa_nav::output::{parse_profile_csv, profile_csv, profile_svg, read_records, trajectory_svg, write_rows, write_text};
use aoa_nav::plan::{run_plan, PlanSpec};
use aoa_nav::scenario::ScenarioFile;
use aoa_nav::suite::{run_suite, summary_table, SuiteSpec, Variant};
use aoa_nav_core::bench::{default_taus, performance_profile};
use aoa_nav_core::geometry::Bounds;
use aoa_nav_core::mission::{run_mission, ControllerConfig};
use aoa_nav_core::world::Environment;
use aoa_nav_core::Point;
use clap::{Parser, Subcommand};
use nalgebra::Matrix2;

#[derive(Parser)]
#[command(name = "aoa-nav", version, about = "AoA transponder localization and belief-space navigation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one mission and write its trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "ekf-t50")]
        variant: Variant,
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// Controller configuration (JSON, missing fields take defaults).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run a benchmark suite; without --scenario, procedural maps are used.
    Suite {
        /// Suite file (JSON).
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Number of procedural maps when no suite file is given.
        #[arg(long, default_value_t = 20)]
        maps: usize,
        /// Seeds per scenario (overrides the suite file).
        #[arg(long)]
        seeds: Option<usize>,
        /// Restrict to these variants (repeatable).
        #[arg(long, value_enum)]
        variant: Vec<Variant>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Performance profile from a suite results CSV.
    Profile {
        #[arg(long)]
        results: PathBuf,
        /// Number of tau samples in [1, 3].
        #[arg(long, default_value_t = 101)]
        taus: usize,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Analytic covariance gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also time both on synthetic models of these dimensions.
        #[arg(long, value_delimiter = ',')]
        timing: Vec<usize>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// One planner solve on the three-obstacle study, dumped as CSV.
    Plan {
        /// Plan settings (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        nlos: bool,
        /// Covariance weight T = t I.
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn load_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn out_dir(dir: &Path) -> Result<&Path> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run {
            scenario,
            seed,
            variant,
            noise_sigma,
            config,
            out_dir: dir,
        } => {
            let dir = out_dir(&dir)?;
            let base: ControllerConfig = load_json(config.as_deref())?;
            let file = ScenarioFile::load(&scenario)?;
            let sc = file.build(noise_sigma)?;
            let result = run_mission(&sc, &variant.config(&base), seed)?;
            write_text(&dir.join("mission.json"), &serde_json::to_string_pretty(&result)?)?;
            let mut path: Vec<Point> = result.trace.iter().map(|c| c.p).collect();
            path.push(result.final_position);
            // LOS filter covariance drawn at the robot every 10 cycles
            let ellipses: Vec<(Point, Matrix2<f64>)> = result
                .trace
                .iter()
                .step_by(10)
                .filter_map(|c| c.tx_cov.map(|[a, b, d]| (c.p, Matrix2::new(a, b, b, d))))
                .collect();
            write_text(&dir.join("trajectory.svg"), &trajectory_svg(Some(&sc.env), &path, &ellipses, 1.0))?;
            println!(
                "{} seed {} {}: success={} path_length={:.2} cycles={}",
                file.name,
                seed,
                variant.name(),
                result.success,
                result.path_length,
                result.cycles
            );
        }
        Cmd::Suite {
            scenario,
            maps,
            seeds,
            variant,
            noise_sigma,
            config,
            out_dir: dir,
        } => {
            let dir = out_dir(&dir)?;
            let base: ControllerConfig = load_json(config.as_deref())?;
            let (mut spec, scenarios) = match scenario {
                Some(p) => {
                    let (mut spec, _) = SuiteSpec::load(&p)?;
                    if let Some(s) = noise_sigma {
                        spec.noise_sigma = s;
                    }
                    let scenarios = spec.scenarios(p.parent().unwrap_or(Path::new(".")))?;
                    (spec, scenarios)
                }
                None => {
                    let spec = SuiteSpec::procedural(maps, 5, noise_sigma.unwrap_or(0.35));
                    let scenarios = spec.scenarios(Path::new("."))?;
                    (spec, scenarios)
                }
            };
            if let Some(n) = seeds {
                spec.seeds = n;
            }
            if !variant.is_empty() {
                spec.variants = variant;
            }
            let outcome = run_suite(&scenarios, spec.seeds, &spec.variants, &base);
            write_rows(&dir.join("results.csv"), &outcome.records)?;
            let summary = summary_table(&outcome.records);
            write_rows(&dir.join("summary.csv"), &summary)?;
            let profile = performance_profile(&outcome.records, &default_taus(101));
            write_text(&dir.join("profile.csv"), &profile_csv(&profile)?)?;
            write_text(&dir.join("profile.svg"), &profile_svg(&profile))?;
            for (s, seed, v, e) in &outcome.errors {
                eprintln!("mission error: {s} seed {seed} {v}: {e}");
            }
            for row in summary.iter().filter(|r| r.class == "all") {
                println!(
                    "{:>14}: success {}/{} ({:.1}%), duration vs follower {}",
                    row.variant,
                    row.successes,
                    row.runs,
                    100.0 * row.success_rate,
                    row.duration_vs_follower.map_or("n/a".into(), |r| format!("{:.3} over {} problems", r, row.common_problems))
                );
            }
        }
        Cmd::Profile { results, taus, out_dir: dir } => {
            let dir = out_dir(&dir)?;
            let records = read_records(&results)?;
            if !records.iter().any(|r| r.success) {
                bail!("no solved problem in {}", results.display());
            }
            let profile = performance_profile(&records, &default_taus(taus));
            let text = profile_csv(&profile)?;
            debug_assert_eq!(parse_profile_csv(&text)?, profile);
            write_text(&dir.join("profile.csv"), &text)?;
            write_text(&dir.join("profile.svg"), &profile_svg(&profile))?;
        }
        Cmd::Gradcheck {
            draws,
            seed,
            timing,
            out_dir: dir,
        } => {
            let report = gradient_check(draws, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !timing.is_empty() {
                let dir = out_dir(&dir)?;
                let rows = gradient_timing(&timing, 0.2)?;
                write_rows(&dir.join("gradient_timing.csv"), &rows)?;
                let ls: Vec<f64> = rows.iter().map(|r| r.l as f64).collect();
                let a: Vec<f64> = rows.iter().map(|r| r.analytic_seconds).collect();
                let f: Vec<f64> = rows.iter().map(|r| r.fd_seconds).collect();
                if rows.len() >= 2 {
                    println!("log-log slope: analytic {:.2}, finite differences {:.2}", log_log_slope(&ls, &a), log_log_slope(&ls, &f));
                }
            }
            if report.los_max_rel_error > 1e-5 || report.known_lor_max_rel_error > 1e-5 {
                bail!("gradient check failed");
            }
        }
        Cmd::Plan { config, nlos, t, out_dir: dir } => {
            let dir = out_dir(&dir)?;
            let mut spec: PlanSpec = load_json(config.as_deref())?;
            spec.nlos |= nlos;
            if let Some(t) = t {
                spec.t = t;
            }
            let plan = run_plan(&spec)?;
            write_rows(&dir.join("plan.csv"), &plan.rows)?;
            let path: Vec<Point> = plan.rows.iter().map(|r| Point::new(r.x, r.y)).collect();
            let (mut lo, mut hi) = (plan.goal, plan.goal);
            for q in path.iter().chain(plan.obstacles.iter().map(|c| &c.center)) {
                lo = lo.inf(q);
                hi = hi.sup(q);
            }
            let pad = Point::new(6.0, 6.0);
            // the goal takes the transponder marker
            let env = Environment::new(vec![], plan.obstacles.clone(), plan.goal, Bounds::new(lo - pad, hi + pad))?;
            write_text(&dir.join("plan.svg"), &trajectory_svg(Some(&env), &path, &plan.ellipses(10), 3.0))?;
            let sol = &plan.solution;
            println!(
                "converged={} iterations={} cost={:.4} trace_sum={:.4} max_violation={:.2e}",
                sol.converged,
                sol.iterations,
                sol.total_cost,
                sol.position_trace_sum(),
                sol.max_constraint_violation
            );
        }
    }
    Ok(())
}
