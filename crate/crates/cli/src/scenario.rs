//! JSON scenario files.

use std::path::Path;

use anyhow::{Context, Result};
use aoa_nav_core::bench::{generate_map, MapSpec};
use aoa_nav_core::geometry::Bounds;
use aoa_nav_core::mission::Scenario;
use aoa_nav_core::world::{Circle, Environment, WallSegment};
use aoa_nav_core::Point;
use serde::{Deserialize, Serialize};

/// Where the map of a scenario comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapSource {
    Explicit {
        walls: Vec<WallSegment>,
        #[serde(default)]
        obstacles: Vec<Circle>,
        tx: Point,
        bounds: Bounds,
        start: Point,
    },
    /// Rooms-and-doors map from the seeded generator.
    Procedural(MapSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    pub map: MapSource,
    /// AoA noise std (rad); the command line or suite value is used when absent.
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    #[serde(default)]
    pub p_mis: f64,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn procedural(seed: u64) -> Self {
        Self {
            name: format!("map{seed:03}"),
            map: MapSource::Procedural(MapSpec { seed, ..MapSpec::default() }),
            noise_sigma: None,
            p_mis: 0.0,
        }
    }

    /// Builds the simulator scenario; `sigma` overrides the file's noise
    /// level when given.
    pub fn build(&self, sigma: Option<f64>) -> Result<Scenario> {
        let (env, start) = match &self.map {
            MapSource::Explicit {
                walls,
                obstacles,
                tx,
                bounds,
                start,
            } => (Environment::new(walls.clone(), obstacles.clone(), *tx, *bounds)?, *start),
            MapSource::Procedural(spec) => {
                let m = generate_map(spec)?;
                (m.env, m.start)
            }
        };
        let noise = sigma.or(self.noise_sigma).unwrap_or(0.35);
        let mut sc = Scenario::new(env, start, noise);
        sc.p_mis = self.p_mis;
        sc.validate()?;
        Ok(sc)
    }
}
