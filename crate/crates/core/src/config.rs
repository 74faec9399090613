//! JSON experiment configuration shared by every CLI subcommand.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{Policy, DEFAULT_EXHAUSTIVE_LIMIT};
use crate::dl::TrainConfig;
use crate::error::{invalid, Result};
use crate::harness::SweepSpec;
use crate::scenario::ScenarioConfig;
use crate::solver::SolverOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub solver: SolverOptions,
    pub train: TrainConfig,
    pub sweep: SweepSpec,
    /// Scenarios per run for `baseline`, `infer` and `special`.
    pub replications: usize,
    pub policies: Vec<Policy>,
    /// Largest library the exhaustive search will enumerate.
    pub exhaustive_limit: usize,
    /// Held-out scenarios labeled by exhaustive search for the test loss.
    pub test_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            solver: SolverOptions::default(),
            train: TrainConfig::default(),
            sweep: SweepSpec::default(),
            replications: 20,
            policies: vec![Policy::No, Policy::Popular, Policy::Greedy, Policy::All],
            exhaustive_limit: DEFAULT_EXHAUSTIVE_LIMIT,
            test_size: 256,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()?;
        self.sweep.validate()?;
        if self.replications == 0 {
            return Err(invalid("replications", "must be >= 1"));
        }
        if !(self.solver.gap_tolerance > 0.0 && self.solver.stop_gap > 0.0) {
            return Err(invalid("solver", "gap tolerances must be > 0"));
        }
        Ok(())
    }
}
