use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::SampleSet;
use crate::autodiff::{Gradients, Optimizer, OptimizerKind, Tape};
use crate::error::{Error, Result};
use crate::nets::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Upper bound on training epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            patience: 20,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be >= 1"));
        }
        // Rejects non-positive learning rates.
        Optimizer::new(self.optimizer, self.learning_rate).map(|_| ())
    }
}

/// Loss curves and bookkeeping of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample MSE seen during each epoch.
    pub train_loss: Vec<f64>,
    /// Validation MSE after each epoch.
    pub val_loss: Vec<f64>,
    /// 0-based epoch whose parameters were kept.
    pub best_epoch: usize,
    /// Every dataset record read by a training batch.
    pub seen_records: BTreeSet<usize>,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

fn diverged(epoch: usize, loss: f64) -> Error {
    Error::TrainingDiverged { epoch, loss }
}

fn sample_gradients(net: &Network, set: &SampleSet, s: usize) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let inputs = set
        .inputs(s)
        .iter()
        .map(|x| tape.constant(x.clone()))
        .collect::<Result<Vec<_>>>()?;
    let y = net.forward_window(&mut tape, &inputs)?;
    let t = tape.constant(set.target(s).clone())?;
    let loss = tape.mse_loss(y, t)?;
    let value = tape.value(loss)?.item()?;
    Ok((value, tape.gradients(loss)?))
}

/// Mean MSE of `net` over `set`.
pub(crate) fn evaluate_loss(net: &Network, set: &SampleSet) -> Result<f64> {
    let mut total = 0.0;
    for s in 0..set.len() {
        let y = net.predict(set.inputs(s))?;
        total += crate::autodiff::mse(&y, set.target(s))?;
    }
    Ok(total / set.len() as f64)
}

/// Mini-batch training with a seeded shuffle. Per-sample gradients are
/// averaged over each batch in sample order, so results depend only on the
/// seed. The parameters of the best validation epoch are restored at the
/// end; training stops early after `patience` epochs without improvement.
pub fn train(net: &mut Network, train: &SampleSet, val: &SampleSet, hyper: &HyperParams, seed: u64) -> Result<TrainReport> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(Error::config("n_train", "no training samples"));
    }
    if val.is_empty() {
        return Err(Error::config("n_val", "no validation samples"));
    }
    if train.window() != net.input_window() {
        return Err(Error::Dimension(format!(
            "samples have window {}, {} consumes {}",
            train.window(),
            net.kind(),
            net.input_window()
        )));
    }
    let mut opt = Optimizer::new(hyper.optimizer, hyper.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        seen_records: BTreeSet::new(),
    };
    let mut best = (f64::INFINITY, net.params().values());
    let mut stale = 0;

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let mut acc = Gradients::default();
            let scale = 1.0 / batch.len() as f64;
            for &s in batch {
                let (loss, grads) = sample_gradients(net, train, s).map_err(|e| match e {
                    Error::Numeric(_) => diverged(epoch, f64::NAN),
                    other => other,
                })?;
                if !loss.is_finite() {
                    return Err(diverged(epoch, loss));
                }
                total += loss;
                acc.add_scaled(scale, &grads)?;
                report.seen_records.extend(train.record_indices(s));
            }
            let store = net.params_mut();
            store.zero_grad();
            store.accumulate(&acc)?;
            opt.step(store);
        }
        let train_loss = total / train.len() as f64;
        let val_loss = evaluate_loss(net, val).map_err(|e| match e {
            Error::Numeric(_) => diverged(epoch, f64::NAN),
            other => other,
        })?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(diverged(epoch, train_loss));
        }
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        if val_loss < best.0 {
            best = (val_loss, net.params().values());
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        }
    }
    net.params_mut().load_values(&best.1)?;
    Ok(report)
}
