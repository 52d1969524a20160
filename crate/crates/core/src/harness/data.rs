use serde::{Deserialize, Serialize};

use super::{SplitConfig, Strategy};
use crate::cfd::{VariableBounds, VariableRange};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Affine per-channel maps into `[0, 1]` fitted on the training split: one
/// for states and, in difference mode, one for consecutive differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub state: VariableBounds,
    pub diff: Option<VariableBounds>,
}

fn map_channels(x: &Tensor, bounds: &VariableBounds, f: impl Fn(f64, VariableRange) -> f64) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Dimension(format!("expected a [3, H, W] frame, got {s:?}")));
    }
    let n = s[1] * s[2];
    let ranges = bounds.as_array();
    let mut out = x.clone();
    for (c, chunk) in out.data_mut().chunks_mut(n).enumerate() {
        for v in chunk {
            *v = f(*v, ranges[c]);
        }
    }
    Ok(out)
}

fn forward(v: f64, r: VariableRange) -> f64 {
    (v - r.min) / (r.max - r.min)
}

fn inverse(v: f64, r: VariableRange) -> f64 {
    r.min + v * (r.max - r.min)
}

impl Normalizer {
    /// Fits state bounds on `train`, plus difference bounds for
    /// [`Strategy::Difference`]. Degenerate ranges are config errors.
    pub fn fit(train: &[Tensor], strategy: Strategy) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::config("n_train", "need at least two training records"));
        }
        let state = VariableBounds::over(train);
        state.validate()?;
        let diff = match strategy {
            Strategy::Absolute => None,
            Strategy::Difference => {
                let diffs = train
                    .windows(2)
                    .map(|w| difference(&w[1], &w[0]))
                    .collect::<Result<Vec<_>>>()?;
                let d = VariableBounds::over(&diffs);
                d.validate()?;
                Some(d)
            }
        };
        Ok(Normalizer { state, diff })
    }

    pub fn strategy(&self) -> Strategy {
        if self.diff.is_some() {
            Strategy::Difference
        } else {
            Strategy::Absolute
        }
    }

    pub fn normalize_state(&self, x: &Tensor) -> Result<Tensor> {
        map_channels(x, &self.state, forward)
    }

    pub fn denormalize_state(&self, x: &Tensor) -> Result<Tensor> {
        map_channels(x, &self.state, inverse)
    }

    fn diff_bounds(&self) -> Result<&VariableBounds> {
        self.diff
            .as_ref()
            .ok_or_else(|| Error::Usage("normalizer has no difference bounds".into()))
    }

    pub fn normalize_diff(&self, d: &Tensor) -> Result<Tensor> {
        map_channels(d, self.diff_bounds()?, forward)
    }

    pub fn denormalize_diff(&self, d: &Tensor) -> Result<Tensor> {
        map_channels(d, self.diff_bounds()?, inverse)
    }

    /// Training target for the transition `current → next`.
    pub fn encode_target(&self, current: &Tensor, next: &Tensor) -> Result<Tensor> {
        match self.strategy() {
            Strategy::Absolute => self.normalize_state(next),
            Strategy::Difference => self.normalize_diff(&difference(next, current)?),
        }
    }

    /// Physical next state from a network output and the physical state the
    /// output is relative to.
    pub fn decode_output(&self, current: &Tensor, output: &Tensor) -> Result<Tensor> {
        match self.strategy() {
            Strategy::Absolute => self.denormalize_state(output),
            Strategy::Difference => {
                let mut next = self.denormalize_diff(output)?;
                next.axpy(1.0, current)?;
                Ok(next)
            }
        }
    }
}

fn difference(next: &Tensor, current: &Tensor) -> Result<Tensor> {
    let mut d = next.clone();
    d.axpy(-1.0, current)?;
    Ok(d)
}

/// Normalized training windows over one contiguous range of records.
/// Sample `s` reads frames `s..s + window` and targets record `s + window`.
#[derive(Debug, Clone)]
pub struct SampleSet {
    window: usize,
    first_index: usize,
    frames: Vec<Tensor>,
    targets: Vec<Tensor>,
}

impl SampleSet {
    fn build(records: &[Tensor], first_index: usize, window: usize, norm: &Normalizer) -> Result<Self> {
        let frames = records
            .iter()
            .map(|r| norm.normalize_state(r))
            .collect::<Result<Vec<_>>>()?;
        let targets = (0..records.len().saturating_sub(window))
            .map(|s| norm.encode_target(&records[s + window - 1], &records[s + window]))
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleSet {
            window,
            first_index,
            frames,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn inputs(&self, s: usize) -> &[Tensor] {
        &self.frames[s..s + self.window]
    }

    pub fn target(&self, s: usize) -> &Tensor {
        &self.targets[s]
    }

    /// Dataset record indices read by sample `s`, inputs then target.
    pub fn record_indices(&self, s: usize) -> std::ops::RangeInclusive<usize> {
        self.first_index + s..=self.first_index + s + self.window
    }
}

/// Normalizer and training / validation samples.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub normalizer: Normalizer,
    pub train: SampleSet,
    pub val: SampleSet,
}

/// Fits the normalizer on the training split and builds windowed samples
/// for the training and validation splits. Test records are never read.
pub fn make_targets(records: &[Tensor], split: &SplitConfig, strategy: Strategy, window: usize) -> Result<PreparedData> {
    if window == 0 {
        return Err(Error::config("seq_len", "input window must be >= 1"));
    }
    split.validate(records.len(), window)?;
    let train = &records[split.train_range()];
    let normalizer = Normalizer::fit(train, strategy)?;
    let train_set = SampleSet::build(train, split.train_range().start, window, &normalizer)?;
    let val_set = SampleSet::build(&records[split.val_range()], split.val_range().start, window, &normalizer)?;
    Ok(PreparedData {
        normalizer,
        train: train_set,
        val: val_set,
    })
}
