//! Experiment pipeline: split and normalize a dataset, train surrogates,
//! roll them out sequentially or regressively, score max errors and
//! residuals, count threshold horizons and decide when to hand back to the
//! solver.

mod data;
mod experiment;
mod monitor;
mod report;
mod rollout;
mod svg;
mod train;

pub use data::{make_targets, Normalizer, PreparedData, SampleSet};
pub use experiment::{
    cell_seed, evaluate_model, fit_model, run_matrix, save_model, switch_decisions, CellResult, ExperimentConfig,
    ModelMeta, NetworkOverrides, TrainedModel,
};
pub use monitor::{
    monitor_residuals, pair_residuals, repit_switch, threshold_horizon, Horizons, ResidualNorms,
    ResidualThresholds, SwitchDecision, SOLVER_PAIR_RESIDUAL_BOUNDS,
};
pub use report::{
    emit_report, read_metrics_csv, render_plots, write_metrics_csv, write_summary_csv,
    EvaluationSeries, METRICS_HEADER, SUMMARY_HEADER,
};
pub use rollout::{max_error, predict_regressive, predict_sequential, MaxError};
pub use train::{train, HyperParams, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contiguous train / validation / test split over dataset records, in
/// that order, after discarding the first `skip` records (the spin-up from
/// rest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub skip: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            n_train: 300,
            n_val: 50,
            n_test: 50,
            skip: 0,
        }
    }
}

impl SplitConfig {
    pub fn new(n_train: usize, n_val: usize, n_test: usize) -> Self {
        SplitConfig {
            n_train,
            n_val,
            n_test,
            skip: 0,
        }
    }

    pub fn with_skip(mut self, skip: usize) -> Self {
        self.skip = skip;
        self
    }

    /// Records used, including the skipped ones.
    pub fn total(&self) -> usize {
        self.skip + self.n_train + self.n_val + self.n_test
    }

    pub fn train_range(&self) -> std::ops::Range<usize> {
        self.skip..self.skip + self.n_train
    }

    pub fn val_range(&self) -> std::ops::Range<usize> {
        let start = self.train_range().end;
        start..start + self.n_val
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        let start = self.val_range().end;
        start..start + self.n_test
    }

    /// Checks the split fits `count` records and leaves at least one sample
    /// per part for an input window of `window` frames.
    pub fn validate(&self, count: usize, window: usize) -> Result<()> {
        for (name, n) in [("n_train", self.n_train), ("n_val", self.n_val), ("n_test", self.n_test)] {
            if n <= window {
                return Err(Error::config(
                    name,
                    format!("{n} records leave no samples for an input window of {window}"),
                ));
            }
        }
        if self.total() > count {
            return Err(Error::config(
                "split",
                format!("{} records requested, dataset has {count}", self.total()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// The network outputs the next state.
    Absolute,
    /// The network outputs the change to the next state.
    Difference,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::Absolute, Strategy::Difference];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Absolute => "absolute",
            Strategy::Difference => "difference",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("strategy", format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Every prediction starts from ground truth.
    Sequential,
    /// Predictions are fed back as inputs.
    Regressive,
}

impl GenerationMode {
    pub const ALL: [GenerationMode; 2] = [GenerationMode::Sequential, GenerationMode::Regressive];

    pub fn as_str(self) -> &'static str {
        match self {
            GenerationMode::Sequential => "sequential",
            GenerationMode::Regressive => "regressive",
        }
    }
}

impl std::fmt::Display for GenerationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GenerationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GenerationMode::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("mode", format!("unknown generation mode `{s}`")))
    }
}

/// Per-variable error thresholds for horizon counting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    /// Temperature threshold in K.
    pub t: f64,
    /// Velocity thresholds in m/s.
    pub u_x: f64,
    pub u_y: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            t: 0.4,
            u_x: 0.024,
            u_y: 0.024,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t", self.t), ("u_x", self.u_x), ("u_y", self.u_y)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    format!("thresholds.{name}"),
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Errors and residual norms of one predicted step. `step` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub max_err_t: f64,
    pub max_err_ux: f64,
    pub max_err_uy: f64,
    pub res_mass: f64,
    pub res_mom: f64,
    pub res_heat: f64,
}

impl MetricsRecord {
    pub fn errors(&self) -> MaxError {
        MaxError {
            t: self.max_err_t,
            u_x: self.max_err_ux,
            u_y: self.max_err_uy,
        }
    }

    pub fn residuals(&self) -> ResidualNorms {
        ResidualNorms {
            mass: self.res_mass,
            momentum: self.res_mom,
            heat: self.res_heat,
        }
    }
}
