//! Run configuration: a TOML file whose values command-line flags override.
//!
//! ```toml
//! seed = 7
//! out = "runs/demo"
//! workers = 1
//! data = "data/cavity.toml"    # dataset manifest
//! steps = 1000                  # records to generate
//! models = ["unet", "convlstm_unet"]
//! strategies = ["absolute", "difference"]
//! modes = ["sequential", "regressive"]
//!
//! [solver]                      # physical and numerical cavity parameters
//! nx = 64
//! ny = 64
//! dt = 0.01
//!
//! [split]
//! n_train = 300
//! n_val = 50
//! n_test = 50
//! skip = 600
//!
//! [spec]                        # network widths
//! base_channels = 16
//! seq_len = 5
//!
//! [hyper]
//! epochs = 200
//! batch_size = 8
//! learning_rate = 1e-3
//! optimizer = "adam"
//! patience = 20
//!
//! [thresholds]                  # max-error horizons, K and m/s
//! t = 0.4
//! u_x = 0.024
//! u_y = 0.024
//!
//! [repit]                       # residual norms that hand back to the solver
//! mass = 1e-11
//! momentum = 1e-11
//! heat = 40.0
//! ```

use std::path::{Path, PathBuf};

use cnnflow::cfd::SolverParams;
use cnnflow::harness::{
    ExperimentConfig, GenerationMode, HyperParams, NetworkOverrides, ResidualThresholds, SplitConfig, Strategy,
    ThresholdConfig,
};
use cnnflow::nets::ModelKind;
use cnnflow::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub workers: usize,
    pub data: Option<PathBuf>,
    pub steps: usize,
    pub models: Vec<ModelKind>,
    pub strategies: Vec<Strategy>,
    pub modes: Vec<GenerationMode>,
    pub solver: SolverParams,
    pub split: SplitConfig,
    pub spec: NetworkOverrides,
    pub hyper: HyperParams,
    pub thresholds: ThresholdConfig,
    pub repit: ResidualThresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        RunConfig {
            seed: None,
            out: PathBuf::from("runs"),
            workers: 1,
            data: None,
            steps: 1000,
            models: exp.models,
            strategies: exp.strategies,
            modes: exp.modes,
            solver: SolverParams::default(),
            split: exp.split,
            spec: exp.spec,
            hyper: exp.hyper,
            thresholds: exp.thresholds,
            repit: exp.repit,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str(&text).map_err(|e| config_parse_error(p, &e))
            }
        }
    }

    /// The seed, which reproducible commands must be given.
    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::config("seed", "a seed is required (--seed or `seed` in the config)"))
    }

    pub fn require_data(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::config("data", "a dataset manifest is required (--data or `data` in the config)"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("workers", "must be >= 1"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be >= 1"));
        }
        self.solver.validate()?;
        self.experiment(0).validate()
    }

    pub fn experiment(&self, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            seed,
            models: self.models.clone(),
            strategies: self.strategies.clone(),
            modes: self.modes.clone(),
            split: self.split,
            spec: self.spec.clone(),
            hyper: self.hyper.clone(),
            thresholds: self.thresholds,
            repit: self.repit,
        }
    }
}

/// Maps a TOML error to a config error naming the offending key.
fn config_parse_error(path: &Path, e: &toml::de::Error) -> Error {
    let msg = e.message().to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.starts_with("unknown field"))
        .map(str::to_string)
        .unwrap_or_else(|| path.display().to_string());
    Error::config(field, msg)
}
