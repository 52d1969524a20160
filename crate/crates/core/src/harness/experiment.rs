use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{make_targets, Normalizer};
use super::monitor::{pair_residuals, repit_switch, ResidualNorms, ResidualThresholds, SwitchDecision};
use super::report::{emit_report, EvaluationSeries};
use super::rollout::{max_error, predict_regressive, predict_sequential};
use super::train::{train, HyperParams, TrainReport};
use super::{GenerationMode, MetricsRecord, SplitConfig, Strategy, ThresholdConfig};
use crate::cfd::{ResidualEvaluator, SolverParams};
use crate::error::{Error, Result};
use crate::nets::{save_checkpoint, ModelKind, Network, NetworkSpec};
use crate::tensor::Tensor;

/// Architecture knobs shared by every model of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkOverrides {
    pub base_channels: usize,
    pub hidden_channels: usize,
    pub seq_len: usize,
    /// Encoder depth; each model's default when absent.
    pub depth: Option<usize>,
}

impl Default for NetworkOverrides {
    fn default() -> Self {
        NetworkOverrides {
            base_channels: 16,
            hidden_channels: 16,
            seq_len: 5,
            depth: None,
        }
    }
}

impl NetworkOverrides {
    pub fn spec(&self, kind: ModelKind, height: usize, width: usize) -> NetworkSpec {
        let mut spec = NetworkSpec::new(kind, height, width)
            .with_base_channels(self.base_channels)
            .with_hidden_channels(self.hidden_channels);
        if kind.is_sequence() {
            spec = spec.with_seq_len(self.seq_len);
        }
        if let Some(d) = self.depth {
            spec = spec.with_depth(d);
        }
        spec
    }
}

/// Everything that defines one train-and-evaluate matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub models: Vec<ModelKind>,
    pub strategies: Vec<Strategy>,
    pub modes: Vec<GenerationMode>,
    pub split: SplitConfig,
    pub spec: NetworkOverrides,
    pub hyper: HyperParams,
    pub thresholds: ThresholdConfig,
    pub repit: ResidualThresholds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            models: ModelKind::ALL.to_vec(),
            strategies: Strategy::ALL.to_vec(),
            modes: GenerationMode::ALL.to_vec(),
            split: SplitConfig::default(),
            spec: NetworkOverrides::default(),
            hyper: HyperParams::default(),
            thresholds: ThresholdConfig::default(),
            repit: ResidualThresholds::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::config("models", "at least one model is required"));
        }
        if self.strategies.is_empty() {
            return Err(Error::config("strategies", "at least one strategy is required"));
        }
        if self.modes.is_empty() {
            return Err(Error::config("modes", "at least one generation mode is required"));
        }
        self.hyper.validate()?;
        self.thresholds.validate()?;
        self.repit.validate()
    }
}

/// Network seed for `model`. Both strategies start from the same weights.
pub fn cell_seed(seed: u64, model: ModelKind) -> u64 {
    let index = ModelKind::ALL.iter().position(|m| *m == model).unwrap_or(0) as u64;
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index)
}

/// Sidecar of a checkpoint: what the network was trained for and how to
/// map its outputs back to physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub model: ModelKind,
    pub strategy: Strategy,
    pub seed: u64,
    pub split: SplitConfig,
    pub parameter_count: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub normalizer: Normalizer,
}

impl ModelMeta {
    /// `<stem>.meta.toml` next to `checkpoint`.
    pub fn path_for(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("meta.toml")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// A trained model with its loss curves and test-split evaluation.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub meta: ModelMeta,
    pub network: Network,
    pub report: TrainReport,
    pub series: Vec<EvaluationSeries>,
    pub switches: Vec<(GenerationMode, SwitchDecision)>,
}

fn record(step: usize, pred: &Tensor, truth: &Tensor, res: ResidualNorms) -> Result<MetricsRecord> {
    let e = max_error(pred, truth)?;
    Ok(MetricsRecord {
        step,
        max_err_t: e.t,
        max_err_ux: e.u_x,
        max_err_uy: e.u_y,
        res_mass: res.mass,
        res_mom: res.momentum,
        res_heat: res.heat,
    })
}

/// Rolls `net` out over the test split in each mode. Step `k` predicts test
/// record `window + k - 1`; its residuals pair the prediction with the state
/// it was produced from (ground truth in sequential mode, the previous
/// prediction in regressive mode).
pub fn evaluate_model(
    net: &Network,
    strategy: Strategy,
    norm: &Normalizer,
    records: &[Tensor],
    split: &SplitConfig,
    modes: &[GenerationMode],
    residuals: &ResidualEvaluator,
) -> Result<Vec<EvaluationSeries>> {
    let w = net.input_window();
    split.validate(records.len(), w)?;
    let test = &records[split.test_range()];
    let mut out = Vec::new();
    for &mode in modes {
        let preds = match mode {
            GenerationMode::Sequential => predict_sequential(net, strategy, norm, test)?,
            GenerationMode::Regressive => predict_regressive(net, strategy, norm, &test[..w], test.len() - w)?,
        };
        let mut records_out = Vec::with_capacity(preds.len());
        for (k, pred) in preds.iter().enumerate() {
            let prev = match (mode, k) {
                (GenerationMode::Regressive, k) if k > 0 => &preds[k - 1],
                _ => &test[k + w - 1],
            };
            let res = pair_residuals(residuals, prev, pred)?;
            records_out.push(record(k + 1, pred, &test[k + w], res)?);
        }
        out.push(EvaluationSeries {
            model: net.kind(),
            strategy,
            mode,
            records: records_out,
        });
    }
    Ok(out)
}

/// A network trained for one model × strategy cell.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub meta: ModelMeta,
    pub network: Network,
    pub report: TrainReport,
}

/// Builds and trains `model` under `strategy` on the training and
/// validation splits of `records`.
pub fn fit_model(cfg: &ExperimentConfig, records: &[Tensor], model: ModelKind, strategy: Strategy) -> Result<TrainedModel> {
    cfg.hyper.validate()?;
    let shape = records
        .first()
        .ok_or_else(|| Error::config("dataset", "no records"))?
        .shape();
    let spec = cfg.spec.spec(model, shape[1], shape[2]);
    let seed = cell_seed(cfg.seed, model);
    let mut net = Network::build(spec, seed)?;
    let data = make_targets(records, &cfg.split, strategy, net.input_window())?;
    let report = train(&mut net, &data.train, &data.val, &cfg.hyper, seed)?;
    let meta = ModelMeta {
        model,
        strategy,
        seed,
        split: cfg.split,
        parameter_count: net.parameter_count(),
        best_epoch: report.best_epoch,
        epochs_run: report.epochs_run(),
        normalizer: data.normalizer,
    };
    Ok(TrainedModel {
        meta,
        network: net,
        report,
    })
}

/// First residual-threshold crossing of each evaluated series.
pub fn switch_decisions(
    series: &[EvaluationSeries],
    thresholds: &ResidualThresholds,
) -> Result<Vec<(GenerationMode, SwitchDecision)>> {
    series
        .iter()
        .map(|s| {
            let norms: Vec<ResidualNorms> = s.records.iter().map(|r| r.residuals()).collect();
            repit_switch(&norms, thresholds).map(|d| (s.mode, d))
        })
        .collect()
}

fn train_cell(
    cfg: &ExperimentConfig,
    records: &[Tensor],
    residuals: &ResidualEvaluator,
    model: ModelKind,
    strategy: Strategy,
) -> Result<CellResult> {
    let trained = fit_model(cfg, records, model, strategy)?;
    let series = evaluate_model(
        &trained.network,
        strategy,
        &trained.meta.normalizer,
        records,
        &cfg.split,
        &cfg.modes,
        residuals,
    )?;
    let switches = switch_decisions(&series, &cfg.repit)?;
    Ok(CellResult {
        meta: trained.meta,
        network: trained.network,
        report: trained.report,
        series,
        switches,
    })
}

/// Writes `<model>_<strategy>.nckp` with its `.meta.toml` sidecar and
/// `.loss.csv` curves under `dir`; returns the checkpoint path.
pub fn save_model(dir: &Path, network: &Network, meta: &ModelMeta, report: &TrainReport) -> Result<PathBuf> {
    let stem = format!("{}_{}", meta.model, meta.strategy);
    let ckpt = dir.join(format!("{stem}.nckp"));
    save_checkpoint(network, &ckpt)?;
    meta.write(&ModelMeta::path_for(&ckpt))?;
    let mut loss = String::from("epoch,train_loss,val_loss\n");
    for (k, (t, v)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
        let _ = writeln!(loss, "{},{t},{v}", k + 1);
    }
    let loss_path = dir.join(format!("{stem}.loss.csv"));
    std::fs::write(&loss_path, loss).map_err(|e| Error::io(&loss_path, e))?;
    Ok(ckpt)
}

/// Trains and evaluates every model × strategy cell of `cfg` on `records`,
/// `workers` cells at a time. Results come back in configuration order and
/// do not depend on `workers`. With `out_dir`, checkpoints, sidecars, loss
/// curves and the report are written there.
pub fn run_matrix(
    cfg: &ExperimentConfig,
    solver: &SolverParams,
    records: &[Tensor],
    workers: usize,
    out_dir: Option<&Path>,
) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let cells: Vec<(ModelKind, Strategy)> = cfg
        .models
        .iter()
        .flat_map(|&m| cfg.strategies.iter().map(move |&s| (m, s)))
        .collect();
    let residuals = ResidualEvaluator::new(solver)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(m, s)| train_cell(cfg, records, &residuals, m, s))
            .collect::<Result<Vec<_>>>()
    })?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for cell in &results {
            save_model(dir, &cell.network, &cell.meta, &cell.report)?;
        }
        let series: Vec<EvaluationSeries> = results.iter().flat_map(|c| c.series.iter().cloned()).collect();
        emit_report(&series, &cfg.thresholds, dir)?;
    }
    Ok(results)
}
