//! Convolutional LSTM cell.
//!
//! ```text
//! i_t = σ(W_xi * X_t + W_hi * H_{t-1} + b_i)
//! f_t = σ(W_xf * X_t + W_hf * H_{t-1} + b_f)
//! o_t = σ(W_xo * X_t + W_ho * H_{t-1} + b_o)
//! g_t = tanh(W_xg * X_t + W_hg * H_{t-1} + b_g)
//! C_t = f_t ⊙ C_{t-1} + i_t ⊙ g_t
//! h_t = o_t ⊙ tanh(C_t)
//! ```
//!
//! `*` is a "same"-padded cross-correlation. There are no peephole terms and
//! the initial `H_0`, `C_0` are zero.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_HIDDEN_CHANNELS: usize = 16;
pub const DEFAULT_KERNEL: usize = 3;
pub const FORGET_BIAS_INIT: f64 = 1.0;

/// Parameter handles for one ConvLSTM cell. Kernels are
/// `[hidden, in_or_hidden, k, k]`, biases `[hidden]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLstmWeights {
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub kernel: usize,
    pub w_xi: ParamId,
    pub w_hi: ParamId,
    pub w_xf: ParamId,
    pub w_hf: ParamId,
    pub w_xo: ParamId,
    pub w_ho: ParamId,
    pub w_xg: ParamId,
    pub w_hg: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_o: ParamId,
    pub b_g: ParamId,
}

impl ConvLstmWeights {
    /// Registers the cell's parameters under `prefix`. Kernels are uniform in
    /// `±sqrt(1/fan_in)`, the forget bias starts at [`FORGET_BIAS_INIT`] and
    /// the other biases at zero.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input_channels: usize,
        hidden_channels: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::config("kernel", format!("ConvLSTM kernel must be odd, got {kernel}")));
        }
        if input_channels == 0 || hidden_channels == 0 {
            return Err(Error::config("hidden_channels", "channel counts must be >= 1"));
        }
        let kk = kernel * kernel;
        let mut kx = |store: &mut ParamStore, name: &str| {
            store.add_uniform(
                format!("{prefix}.{name}"),
                &[hidden_channels, input_channels, kernel, kernel],
                input_channels * kk,
                rng,
            )
        };
        let w_xi = kx(store, "w_xi")?;
        let w_xf = kx(store, "w_xf")?;
        let w_xo = kx(store, "w_xo")?;
        let w_xg = kx(store, "w_xg")?;
        let mut kh = |store: &mut ParamStore, name: &str| {
            store.add_uniform(
                format!("{prefix}.{name}"),
                &[hidden_channels, hidden_channels, kernel, kernel],
                hidden_channels * kk,
                rng,
            )
        };
        let w_hi = kh(store, "w_hi")?;
        let w_hf = kh(store, "w_hf")?;
        let w_ho = kh(store, "w_ho")?;
        let w_hg = kh(store, "w_hg")?;
        let b_i = store.add(format!("{prefix}.b_i"), Tensor::zeros(&[hidden_channels]))?;
        let b_f = store.add(
            format!("{prefix}.b_f"),
            Tensor::full(&[hidden_channels], FORGET_BIAS_INIT),
        )?;
        let b_o = store.add(format!("{prefix}.b_o"), Tensor::zeros(&[hidden_channels]))?;
        let b_g = store.add(format!("{prefix}.b_g"), Tensor::zeros(&[hidden_channels]))?;
        Ok(ConvLstmWeights {
            input_channels,
            hidden_channels,
            kernel,
            w_xi,
            w_hi,
            w_xf,
            w_hf,
            w_xo,
            w_ho,
            w_xg,
            w_hg,
            b_i,
            b_f,
            b_o,
            b_g,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 12] {
        [
            self.w_xi, self.w_hi, self.w_xf, self.w_hf, self.w_xo, self.w_ho, self.w_xg,
            self.w_hg, self.b_i, self.b_f, self.b_o, self.b_g,
        ]
    }

    /// Records the cell's weights on `tape`, stacking the four gates so each
    /// step costs one input convolution and one hidden convolution.
    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> Result<BoundConvLstm> {
        let mut p = |id| tape.param(store, id);
        let (xi, xf, xo, xg) = (p(self.w_xi)?, p(self.w_xf)?, p(self.w_xo)?, p(self.w_xg)?);
        let (hi, hf, ho, hg) = (p(self.w_hi)?, p(self.w_hf)?, p(self.w_ho)?, p(self.w_hg)?);
        let (bi, bf, bo, bg) = (p(self.b_i)?, p(self.b_f)?, p(self.b_o)?, p(self.b_g)?);
        Ok(BoundConvLstm {
            w_x: tape.concat(&[xi, xf, xo, xg])?,
            w_h: tape.concat(&[hi, hf, ho, hg])?,
            bias: tape.concat(&[bi, bf, bo, bg])?,
            input_channels: self.input_channels,
            hidden: self.hidden_channels,
            padding: self.kernel / 2,
        })
    }
}

/// Cell state recorded on a tape. Steps take `Option<TapedState>`, where
/// `None` is the zero initial state.
#[derive(Debug, Clone, Copy)]
pub struct TapedState {
    pub h: Var,
    pub c: Var,
}

/// Gate activations of one step, for inspection.
#[derive(Debug, Clone, Copy)]
pub struct TapedGates {
    pub i: Var,
    pub f: Var,
    pub o: Var,
    pub g: Var,
}

/// ConvLSTM weights recorded on one tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundConvLstm {
    w_x: Var,
    w_h: Var,
    bias: Var,
    input_channels: usize,
    hidden: usize,
    padding: usize,
}

impl BoundConvLstm {
    pub fn step(&self, tape: &mut Tape, x: Var, prev: Option<TapedState>) -> Result<TapedState> {
        self.step_with_gates(tape, x, prev).map(|(s, _)| s)
    }

    pub fn step_with_gates(
        &self,
        tape: &mut Tape,
        x: Var,
        prev: Option<TapedState>,
    ) -> Result<(TapedState, TapedGates)> {
        let xs = tape.value(x)?.shape().to_vec();
        if xs.len() != 3 || xs[0] != self.input_channels {
            return Err(Error::Dimension(format!(
                "ConvLSTM input must be [{}, H, W], got {xs:?}",
                self.input_channels
            )));
        }
        if let Some(p) = prev {
            let hs = tape.value(p.h)?.shape();
            if hs[1..] != xs[1..] {
                return Err(Error::Dimension(format!(
                    "ConvLSTM input spatial {:?} differs from state {:?}",
                    &xs[1..],
                    &hs[1..]
                )));
            }
        }
        let mut z = tape.conv2d(x, self.w_x, Some(self.bias), 1, self.padding)?;
        if let Some(p) = prev {
            let zh = tape.conv2d(p.h, self.w_h, None, 1, self.padding)?;
            z = tape.add(z, zh)?;
        }
        let n = self.hidden;
        let zi = tape.slice(z, 0, n)?;
        let zf = tape.slice(z, n, n)?;
        let zo = tape.slice(z, 2 * n, n)?;
        let zg = tape.slice(z, 3 * n, n)?;
        let i = tape.sigmoid(zi)?;
        let f = tape.sigmoid(zf)?;
        let o = tape.sigmoid(zo)?;
        let g = tape.tanh(zg)?;
        let ig = tape.mul(i, g)?;
        let c = match prev {
            Some(p) => {
                let fc = tape.mul(f, p.c)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok((TapedState { h, c }, TapedGates { i, f, o, g }))
    }

    /// Folds [`BoundConvLstm::step`] over `sequence` from the zero state.
    pub fn rollout(&self, tape: &mut Tape, sequence: &[Var]) -> Result<TapedState> {
        let (first, rest) = sequence
            .split_first()
            .ok_or_else(|| Error::Usage("ConvLSTM rollout over an empty sequence".into()))?;
        let mut state = self.step(tape, *first, None)?;
        for &x in rest {
            state = self.step(tape, x, Some(state))?;
        }
        Ok(state)
    }
}

/// Materialized cell state: short-term `h` and long-term `c`, both
/// `[hidden, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl ConvLstmState {
    pub fn zeros(hidden: usize, height: usize, width: usize) -> Self {
        ConvLstmState {
            h: Tensor::zeros(&[hidden, height, width]),
            c: Tensor::zeros(&[hidden, height, width]),
        }
    }
}

/// One eager ConvLSTM step.
pub fn convlstm_step(
    x: &Tensor,
    state: &ConvLstmState,
    store: &ParamStore,
    w: &ConvLstmWeights,
) -> Result<ConvLstmState> {
    if state.h.shape() != state.c.shape() {
        return Err(Error::Dimension("ConvLSTM state h and c shapes differ".into()));
    }
    let mut tape = Tape::new();
    let cell = w.bind(&mut tape, store)?;
    let xv = tape.constant(x.clone())?;
    let prev = TapedState {
        h: tape.constant(state.h.clone())?,
        c: tape.constant(state.c.clone())?,
    };
    let next = cell.step(&mut tape, xv, Some(prev))?;
    Ok(ConvLstmState {
        h: tape.value(next.h)?.clone(),
        c: tape.value(next.c)?.clone(),
    })
}

/// Eager rollout over `sequence` from zero state.
pub fn convlstm_rollout(
    sequence: &[Tensor],
    store: &ParamStore,
    w: &ConvLstmWeights,
) -> Result<ConvLstmState> {
    if let Some(first) = sequence.first() {
        if sequence.iter().any(|x| x.shape() != first.shape()) {
            return Err(Error::Dimension("ConvLSTM sequence frames differ in shape".into()));
        }
    }
    let mut tape = Tape::new();
    let cell = w.bind(&mut tape, store)?;
    let xs = sequence
        .iter()
        .map(|x| tape.constant(x.clone()))
        .collect::<Result<Vec<_>>>()?;
    let s = cell.rollout(&mut tape, &xs)?;
    Ok(ConvLstmState {
        h: tape.value(s.h)?.clone(),
        c: tape.value(s.c)?.clone(),
    })
}
