//! Experiment configuration: defaults, TOML file, command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use udkf::models::{InsConstants, ModelSpec};
use udkf::Engine;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EngineChoice {
    Ud,
    Conv,
    Both,
}

impl EngineChoice {
    pub fn engines(self) -> Vec<Engine> {
        match self {
            EngineChoice::Ud => vec![Engine::Ud],
            EngineChoice::Conv => vec![Engine::Conv],
            EngineChoice::Both => vec![Engine::Ud, Engine::Conv],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub engine: EngineChoice,
    pub out: PathBuf,
    pub scan: ScanConfig,
    pub monte_carlo: MonteCarloConfig,
    pub simulate: SimulateConfig,
    pub filter_run: FilterRunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            engine: EngineChoice::Both,
            out: PathBuf::from("results"),
            scan: ScanConfig::default(),
            monte_carlo: MonteCarloConfig::default(),
            simulate: SimulateConfig::default(),
            filter_run: FilterRunConfig::default(),
        }
    }
}

/// Likelihood scan of the INS model over the accelerometer bandwidth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub gamma_true: f64,
    pub steps: usize,
    pub grid_start: f64,
    pub grid_step: f64,
    pub grid_points: usize,
    pub constants: InsConstants,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            gamma_true: 2e-4,
            steps: 100_000,
            grid_start: 1e-5,
            grid_step: 1e-5,
            grid_points: 40,
            constants: InsConstants::default(),
        }
    }
}

pub const DESK_REPLICATIONS: usize = 25;
pub const FULL_REPLICATIONS: usize = 250;

/// Repeated estimation on the ill-conditioned family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub deltas: Vec<f64>,
    pub replications: usize,
    pub steps: usize,
    pub theta_true: f64,
    pub theta0: f64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            deltas: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            replications: DESK_REPLICATIONS,
            steps: 1000,
            theta_true: 7.0,
            theta0: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelSpec,
    pub theta: Vec<f64>,
    pub steps: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { model: ModelSpec::IllConditioned { delta: 1e-2 }, theta: vec![7.0], steps: 1000 }
    }
}

/// Filtering of a measurement file; `theta` defaults to the sidecar's
/// `theta_true`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterRunConfig {
    pub input: Option<PathBuf>,
    pub theta: Option<Vec<f64>>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub deltas: Option<Vec<f64>>,
    pub engine: Option<EngineChoice>,
    pub out: Option<PathBuf>,
    pub full_scale: bool,
    pub input: Option<PathBuf>,
    pub theta: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Defaults, then the file if any, then the command line.
    pub fn resolve(file: Option<&Path>, o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(o);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.full_scale {
            self.monte_carlo.replications = FULL_REPLICATIONS;
        }
        if let Some(r) = o.replications {
            self.monte_carlo.replications = r;
        }
        if let Some(d) = &o.deltas {
            self.monte_carlo.deltas = d.clone();
        }
        if let Some(e) = o.engine {
            self.engine = e;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(p) = &o.input {
            self.filter_run.input = Some(p.clone());
        }
        if let Some(t) = &o.theta {
            self.filter_run.theta = Some(t.clone());
            self.simulate.theta = t.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Usage(msg));
        let s = &self.scan;
        if !(s.gamma_true > 0.0) || !(s.grid_start > 0.0) || !(s.grid_step > 0.0) {
            return bad("scan: gamma_true, grid_start and grid_step must be positive".into());
        }
        if s.grid_points == 0 || s.steps == 0 {
            return bad("scan: grid_points and steps must be at least 1".into());
        }
        let mc = &self.monte_carlo;
        if mc.deltas.is_empty() || mc.deltas.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return bad("monte_carlo: deltas must be a non-empty list of positive numbers".into());
        }
        if mc.replications == 0 || mc.steps == 0 {
            return bad("monte_carlo: replications and steps must be at least 1".into());
        }
        if !(mc.theta_true > 0.0) || !(mc.theta0 > 0.0) {
            return bad("monte_carlo: theta_true and theta0 must be positive".into());
        }
        if self.simulate.theta.iter().any(|t| !t.is_finite()) {
            return bad("simulate: theta must be finite".into());
        }
        Ok(())
    }
}
