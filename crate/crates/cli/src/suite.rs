//! Benchmark suites: every (scenario, seed, variant) mission, run in a work
//! pool and merged by key.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use aoa_nav_core::bench::{duration_ratio, summarize, LinkClass, RunRecord, VariantSummary};
use aoa_nav_core::mission::{run_mission, ControllerConfig, Scenario, Strategy};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioFile;

/// Controller variants compared by the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// EKF bank and planner with covariance weight T = 50 I.
    EkfT50,
    /// EKF bank and planner without the covariance term.
    EkfT0,
    /// Steps along the measured LOS or first-order AoA.
    AoaFollower,
    /// Shortest path to the true transponder.
    KnownTx,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::EkfT50, Variant::EkfT0, Variant::AoaFollower, Variant::KnownTx];

    pub fn name(self) -> &'static str {
        match self {
            Variant::EkfT50 => "ekf_t50",
            Variant::EkfT0 => "ekf_t0",
            Variant::AoaFollower => "aoa_follower",
            Variant::KnownTx => "known_tx",
        }
    }

    pub fn config(self, base: &ControllerConfig) -> ControllerConfig {
        let mut cfg = base.clone();
        match self {
            Variant::EkfT50 => {
                cfg.strategy = Strategy::Ekf;
                cfg.t_high = 50.0;
            }
            Variant::EkfT0 => {
                cfg.strategy = Strategy::Ekf;
                cfg.t_high = 0.0;
                cfg.t_low = 0.0;
            }
            Variant::AoaFollower => cfg.strategy = Strategy::AoaFollower,
            Variant::KnownTx => cfg.strategy = Strategy::KnownTx,
        }
        cfg
    }
}

fn all_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

fn default_seeds() -> usize {
    5
}

fn default_sigma() -> f64 {
    0.35
}

/// A block of procedurally generated maps with consecutive generator seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralSet {
    pub count: usize,
    #[serde(default)]
    pub first_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    /// Scenario files, relative to the suite file.
    #[serde(default)]
    pub scenarios: Vec<PathBuf>,
    #[serde(default)]
    pub procedural: Option<ProceduralSet>,
    /// Mission seeds per scenario: `0..seeds`.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "all_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
}

impl SuiteSpec {
    /// `count` procedural maps, `seeds` seeds each, all variants.
    pub fn procedural(count: usize, seeds: usize, noise_sigma: f64) -> Self {
        Self {
            scenarios: Vec::new(),
            procedural: Some(ProceduralSet { count, first_seed: 0 }),
            seeds,
            variants: all_variants(),
            noise_sigma,
        }
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<NamedScenario>)> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let spec: SuiteSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let scenarios = spec.scenarios(dir)?;
        Ok((spec, scenarios))
    }

    /// Loads and builds every scenario; file paths are taken relative to `dir`.
    pub fn scenarios(&self, dir: &Path) -> Result<Vec<NamedScenario>> {
        let mut files = Vec::new();
        for p in &self.scenarios {
            files.push(ScenarioFile::load(&dir.join(p))?);
        }
        if let Some(set) = &self.procedural {
            files.extend((0..set.count as u64).map(|i| ScenarioFile::procedural(set.first_seed + i)));
        }
        if files.is_empty() {
            bail!("suite has no scenarios");
        }
        if self.variants.is_empty() {
            bail!("suite has no variants");
        }
        let mut out: Vec<NamedScenario> = Vec::with_capacity(files.len());
        for f in files {
            if out.iter().any(|s| s.name == f.name) {
                bail!("duplicate scenario name {}", f.name);
            }
            let scenario = f.build(Some(self.noise_sigma)).with_context(|| format!("building scenario {}", f.name))?;
            out.push(NamedScenario { name: f.name, scenario });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct NamedScenario {
    pub name: String,
    pub scenario: Scenario,
}

/// Records in `(scenario, seed, variant)` order, plus the missions that
/// raised an error (also present in `records` as failures).
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub records: Vec<RunRecord>,
    pub errors: Vec<(String, u64, String, String)>,
}

/// Runs every mission. Each (scenario, seed) pair uses the same mission seed
/// for all variants.
pub fn run_suite(scenarios: &[NamedScenario], seeds: usize, variants: &[Variant], base: &ControllerConfig) -> SuiteOutcome {
    let mut tasks = Vec::new();
    for (si, _) in scenarios.iter().enumerate() {
        for seed in 0..seeds as u64 {
            for &v in variants {
                tasks.push((si, seed, v));
            }
        }
    }
    let mut results: Vec<(RunRecord, Option<String>)> = tasks
        .par_iter()
        .map(|&(si, seed, v)| {
            let sc = &scenarios[si];
            let initial_link = match aoa_nav_core::world::trace_signal(&sc.scenario.env, &sc.scenario.start) {
                Ok(Some(m)) => LinkClass::from(&m.link),
                _ => LinkClass::NoSignal,
            };
            let mut rec = RunRecord {
                variant: v.name().into(),
                scenario: sc.name.clone(),
                seed,
                success: false,
                path_length: 0.0,
                cycles: 0,
                initial_link,
            };
            match run_mission(&sc.scenario, &v.config(base), seed) {
                Ok(r) => {
                    rec.success = r.success;
                    rec.path_length = r.path_length;
                    rec.cycles = r.cycles;
                    (rec, None)
                }
                Err(e) => (rec, Some(e.to_string())),
            }
        })
        .collect();
    results.sort_by(|a, b| (&a.0.scenario, a.0.seed, &a.0.variant).cmp(&(&b.0.scenario, b.0.seed, &b.0.variant)));
    let errors = results
        .iter()
        .filter_map(|(r, e)| e.as_ref().map(|e| (r.scenario.clone(), r.seed, r.variant.clone(), e.clone())))
        .collect();
    SuiteOutcome {
        records: results.into_iter().map(|(r, _)| r).collect(),
        errors,
    }
}

/// One row of the aggregate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// `all` or one initial link class.
    pub class: String,
    pub variant: String,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub solved_path: f64,
    /// Path length over the AoA follower's on the problems both solved.
    pub duration_vs_follower: Option<f64>,
    pub common_problems: usize,
}

fn class_name(c: Option<LinkClass>) -> &'static str {
    match c {
        None => "all",
        Some(LinkClass::Los) => "los",
        Some(LinkClass::FirstOrderNlos) => "first_order_nlos",
        Some(LinkClass::HigherOrderNlos) => "higher_order_nlos",
        Some(LinkClass::NoSignal) => "no_signal",
    }
}

/// Success rates and duration ratios, overall and per initial link class.
pub fn summary_table(records: &[RunRecord]) -> Vec<SummaryRow> {
    let follower = Variant::AoaFollower.name();
    let classes = [
        None,
        Some(LinkClass::Los),
        Some(LinkClass::FirstOrderNlos),
        Some(LinkClass::HigherOrderNlos),
        Some(LinkClass::NoSignal),
    ];
    let mut rows = Vec::new();
    for class in classes {
        let subset: Vec<RunRecord> = records.iter().filter(|r| class.is_none_or(|c| r.initial_link == c)).cloned().collect();
        for VariantSummary {
            variant,
            runs,
            successes,
            success_rate,
            solved_path,
        } in summarize(&subset, None)
        {
            let ratio = duration_ratio(&subset, &variant, follower);
            rows.push(SummaryRow {
                class: class_name(class).into(),
                variant,
                runs,
                successes,
                success_rate,
                solved_path,
                duration_vs_follower: ratio.map(|r| r.0),
                common_problems: ratio.map_or(0, |r| r.1),
            });
        }
    }
    rows
}
