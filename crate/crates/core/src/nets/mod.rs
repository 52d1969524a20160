//! Encoder-decoder surrogate networks over 3-channel flow images.
//!
//! All four kinds share one trunk layout. With `c_k = base * 2^k`:
//!
//! ```text
//! encoder   k = 0..depth:   conv3x3(c_{k-1} -> c_k) + ReLU  -> f_k -> maxpool 2
//! bottleneck               conv3x3(c_{d-1} -> c_{d-1}) + ReLU
//! decoder   k = depth-1..0: convT2x2/2(-> c_k) + ReLU
//!                           [UNet: concat f_k]  conv3x3(-> c_k) + ReLU
//! head                     conv1x1(c_0 -> 3) + sigmoid
//! ```
//!
//! ConvLSTM-UNet runs a ConvLSTM over the input frames and feeds its final
//! hidden state `h_t` into a UNet trunk.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, NCKP_MAGIC, NCKP_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ActivationKind, ParamId, ParamStore, Tape, Var};
use crate::convlstm::{ConvLstmWeights, DEFAULT_HIDDEN_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FIELD_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Autoencoder,
    Unet,
    UnetSmall,
    ConvlstmUnet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Autoencoder,
        ModelKind::Unet,
        ModelKind::UnetSmall,
        ModelKind::ConvlstmUnet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Autoencoder => "autoencoder",
            ModelKind::Unet => "unet",
            ModelKind::UnetSmall => "unet_small",
            ModelKind::ConvlstmUnet => "convlstm_unet",
        }
    }

    pub fn has_skips(self) -> bool {
        !matches!(self, ModelKind::Autoencoder)
    }

    pub fn is_sequence(self) -> bool {
        matches!(self, ModelKind::ConvlstmUnet)
    }

    /// Default encoder depth: UNet-Small is UNet with one stage fewer.
    pub fn default_depth(self) -> usize {
        match self {
            ModelKind::UnetSmall => 2,
            _ => 3,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("model", format!("unknown model `{s}`")))
    }
}

/// Declarative description of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub kind: ModelKind,
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub kernel: usize,
    pub pool: usize,
    /// Frames per input window; only meaningful for `convlstm_unet`.
    pub seq_len: usize,
    pub hidden_channels: usize,
    pub output_activation: ActivationKind,
    /// Grid the network is built for.
    pub height: usize,
    pub width: usize,
}

impl NetworkSpec {
    /// Defaults for `kind` on an `height x width` grid.
    pub fn new(kind: ModelKind, height: usize, width: usize) -> Self {
        NetworkSpec {
            kind,
            in_channels: FIELD_CHANNELS,
            base_channels: 16,
            depth: kind.default_depth(),
            kernel: 3,
            pool: 2,
            seq_len: if kind.is_sequence() { 5 } else { 1 },
            hidden_channels: DEFAULT_HIDDEN_CHANNELS,
            output_activation: ActivationKind::Sigmoid,
            height,
            width,
        }
    }

    pub fn with_base_channels(mut self, base: usize) -> Self {
        self.base_channels = base;
        self
    }

    pub fn with_hidden_channels(mut self, hidden: usize) -> Self {
        self.hidden_channels = hidden;
        self
    }

    pub fn with_seq_len(mut self, seq_len: usize) -> Self {
        self.seq_len = seq_len;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    /// Number of frames consumed per prediction.
    pub fn input_window(&self) -> usize {
        if self.kind.is_sequence() {
            self.seq_len
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("depth", "must be >= 1"));
        }
        if self.in_channels != FIELD_CHANNELS {
            return Err(Error::config("in_channels", format!("must be {FIELD_CHANNELS}")));
        }
        if self.base_channels == 0 {
            return Err(Error::config("base_channels", "must be >= 1"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config("kernel", "must be odd for same padding"));
        }
        if self.pool < 2 {
            return Err(Error::config("pool", "must be >= 2"));
        }
        if self.output_activation != ActivationKind::Sigmoid {
            return Err(Error::config("output_activation", "only sigmoid is supported"));
        }
        if self.kind.is_sequence() {
            if self.seq_len == 0 {
                return Err(Error::config("seq_len", "must be >= 1"));
            }
            if self.hidden_channels == 0 {
                return Err(Error::config("hidden_channels", "must be >= 1"));
            }
        }
        let factor = self.pool.pow(self.depth as u32);
        for (field, extent) in [("height", self.height), ("width", self.width)] {
            if extent == 0 || extent % factor != 0 {
                return Err(Error::config(
                    field,
                    format!("{extent} is not divisible by pool^depth = {factor}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    padding: usize,
    transposed: bool,
}

impl ConvLayer {
    fn conv(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.add_uniform(format!("{name}.weight"), &[c_out, c_in, k, k], c_in * k * k, rng)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(ConvLayer {
            weight,
            bias,
            stride: 1,
            padding: k / 2,
            transposed: false,
        })
    }

    fn up(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.add_uniform(format!("{name}.weight"), &[c_in, c_out, k, k], c_in * k * k, rng)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(ConvLayer {
            weight,
            bias,
            stride: k,
            padding: 0,
            transposed: true,
        })
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight)?;
        let b = tape.param(store, self.bias)?;
        if self.transposed {
            tape.conv_transpose2d(x, w, Some(b), self.stride, self.padding)
        } else {
            tape.conv2d(x, w, Some(b), self.stride, self.padding)
        }
    }
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: ConvLayer,
    refine: ConvLayer,
}

/// An instantiated network: its spec, parameters and layer wiring.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    params: ParamStore,
    lstm: Option<ConvLstmWeights>,
    encoder: Vec<ConvLayer>,
    bottleneck: ConvLayer,
    /// Indexed by level, `decoder[k]` produces `c_k` channels.
    decoder: Vec<DecoderStage>,
    head: ConvLayer,
}

impl Network {
    /// Builds `spec` with parameters drawn deterministically from `seed`.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let k = spec.kernel;

        let (lstm, trunk_in) = if spec.kind.is_sequence() {
            let w = ConvLstmWeights::init(
                &mut params,
                "convlstm",
                spec.in_channels,
                spec.hidden_channels,
                k,
                &mut rng,
            )?;
            (Some(w), spec.hidden_channels)
        } else {
            (None, spec.in_channels)
        };

        let channels: Vec<usize> = (0..spec.depth).map(|l| spec.base_channels << l).collect();
        let mut encoder = Vec::with_capacity(spec.depth);
        let mut c_prev = trunk_in;
        for (level, &c) in channels.iter().enumerate() {
            encoder.push(ConvLayer::conv(&mut params, &format!("enc{level}"), c_prev, c, k, &mut rng)?);
            c_prev = c;
        }
        let bottleneck = ConvLayer::conv(&mut params, "bottleneck", c_prev, c_prev, k, &mut rng)?;

        let mut decoder: Vec<Option<DecoderStage>> = vec![None; spec.depth];
        for level in (0..spec.depth).rev() {
            let c = channels[level];
            let up = ConvLayer::up(&mut params, &format!("dec{level}.up"), c_prev, c, spec.pool, &mut rng)?;
            let refine_in = if spec.kind.has_skips() { 2 * c } else { c };
            let refine = ConvLayer::conv(&mut params, &format!("dec{level}.refine"), refine_in, c, k, &mut rng)?;
            decoder[level] = Some(DecoderStage { up, refine });
            c_prev = c;
        }
        let decoder = decoder.into_iter().map(|d| d.expect("every level built")).collect();
        let head = ConvLayer::conv(&mut params, "head", channels[0], FIELD_CHANNELS, 1, &mut rng)?;

        Ok(Network {
            spec,
            params,
            lstm,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn input_window(&self) -> usize {
        self.spec.input_window()
    }

    fn check_frame(&self, frame: &Tensor) -> Result<()> {
        let s = frame.shape();
        let factor = self.spec.pool.pow(self.spec.depth as u32);
        if s.len() != 3 || s[0] != FIELD_CHANNELS {
            return Err(Error::Dimension(format!(
                "expected a [{FIELD_CHANNELS}, H, W] frame, got {s:?}"
            )));
        }
        if s[1] % factor != 0 || s[2] % factor != 0 {
            return Err(Error::Dimension(format!(
                "frame {}x{} not divisible by {factor}",
                s[1], s[2]
            )));
        }
        Ok(())
    }

    fn trunk(&self, tape: &mut Tape, x: Var, zero_skips: bool) -> Result<Var> {
        let p = &self.params;
        let mut features = Vec::with_capacity(self.spec.depth);
        let mut h = x;
        for layer in &self.encoder {
            let a = layer.apply(tape, p, h)?;
            let a = tape.relu(a)?;
            features.push(a);
            h = tape.max_pool2d(a, self.spec.pool)?;
        }
        let b = self.bottleneck.apply(tape, p, h)?;
        h = tape.relu(b)?;
        for level in (0..self.spec.depth).rev() {
            let stage = &self.decoder[level];
            let u = stage.up.apply(tape, p, h)?;
            let u = tape.relu(u)?;
            let merged = if self.spec.kind.has_skips() {
                let skip = if zero_skips {
                    let shape = tape.value(features[level])?.shape().to_vec();
                    tape.constant(Tensor::zeros(&shape))?
                } else {
                    features[level]
                };
                tape.concat(&[u, skip])?
            } else {
                u
            };
            let r = stage.refine.apply(tape, p, merged)?;
            h = tape.relu(r)?;
        }
        let out = self.head.apply(tape, p, h)?;
        tape.activation(out, self.spec.output_activation)
    }

    /// Records a forward pass over an input window (`input_window()` frames,
    /// oldest first) and returns the predicted `[3, H, W]` field.
    pub fn forward_window(&self, tape: &mut Tape, frames: &[Var]) -> Result<Var> {
        if frames.len() != self.input_window() {
            return Err(Error::Dimension(format!(
                "{} expects {} input frames, got {}",
                self.spec.kind,
                self.input_window(),
                frames.len()
            )));
        }
        for &f in frames {
            self.check_frame(tape.value(f)?)?;
        }
        match &self.lstm {
            Some(w) => {
                let cell = w.bind(tape, &self.params)?;
                let state = cell.rollout(tape, frames)?;
                self.trunk(tape, state.h, false)
            }
            None => self.trunk(tape, frames[0], false),
        }
    }

    /// Like [`Network::forward_window`] for single-frame UNets, but with every
    /// skip input replaced by zeros.
    pub fn forward_without_skips(&self, x: &Tensor) -> Result<Tensor> {
        if !matches!(self.spec.kind, ModelKind::Unet | ModelKind::UnetSmall) {
            return Err(Error::Usage("skip ablation applies to single-frame UNets".into()));
        }
        self.check_frame(x)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone())?;
        let y = self.trunk(&mut tape, xv, true)?;
        Ok(tape.value(y)?.clone())
    }

    /// Next-step prediction from one frame (Autoencoder, UNet, UNet-Small).
    pub fn forward_single(&self, x: &Tensor) -> Result<Tensor> {
        if self.spec.kind.is_sequence() {
            return Err(Error::Usage(format!(
                "forward_single is not defined for {}",
                self.spec.kind
            )));
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone())?;
        let y = self.forward_window(&mut tape, &[xv])?;
        Ok(tape.value(y)?.clone())
    }

    /// Next-step prediction from `seq_len` frames (ConvLSTM-UNet).
    pub fn forward_sequence(&self, xs: &[Tensor]) -> Result<Tensor> {
        if !self.spec.kind.is_sequence() {
            return Err(Error::Usage(format!(
                "forward_sequence is not defined for {}",
                self.spec.kind
            )));
        }
        let mut tape = Tape::new();
        let vars = xs
            .iter()
            .map(|x| tape.constant(x.clone()))
            .collect::<Result<Vec<_>>>()?;
        let y = self.forward_window(&mut tape, &vars)?;
        Ok(tape.value(y)?.clone())
    }

    /// Prediction for any kind from a window of frames.
    pub fn predict(&self, frames: &[Tensor]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = frames
            .iter()
            .map(|x| tape.constant(x.clone()))
            .collect::<Result<Vec<_>>>()?;
        let y = self.forward_window(&mut tape, &vars)?;
        Ok(tape.value(y)?.clone())
    }
}
