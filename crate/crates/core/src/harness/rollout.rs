use serde::{Deserialize, Serialize};

use super::data::Normalizer;
use super::Strategy;
use crate::error::{Error, Result};
use crate::nets::Network;
use crate::tensor::Tensor;

/// Largest absolute error per variable: `t` in K, velocities in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxError {
    pub t: f64,
    pub u_x: f64,
    pub u_y: f64,
}

/// Per-variable max absolute difference between two physical `[3, H, W]`
/// frames ordered `u_x, u_y, T`.
pub fn max_error(pred: &Tensor, truth: &Tensor) -> Result<MaxError> {
    if pred.shape() != truth.shape() || pred.rank() != 3 || pred.shape()[0] != 3 {
        return Err(Error::Dimension(format!(
            "max_error needs matching [3, H, W] frames, got {:?} and {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let n = pred.len() / 3;
    let channel = |c: usize| {
        pred.data()[c * n..(c + 1) * n]
            .iter()
            .zip(&truth.data()[c * n..(c + 1) * n])
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    };
    Ok(MaxError {
        u_x: channel(0),
        u_y: channel(1),
        t: channel(2),
    })
}

fn check_strategy(strategy: Strategy, norm: &Normalizer) -> Result<()> {
    if norm.strategy() != strategy {
        return Err(Error::Usage(format!(
            "normalizer was fitted for the {} strategy, not {strategy}",
            norm.strategy()
        )));
    }
    Ok(())
}

/// One prediction from a window of physical frames.
fn predict_next(net: &Network, norm: &Normalizer, window: &[Tensor]) -> Result<Tensor> {
    let inputs = window
        .iter()
        .map(|f| norm.normalize_state(f))
        .collect::<Result<Vec<_>>>()?;
    let out = net.predict(&inputs)?;
    norm.decode_output(window.last().expect("non-empty window"), &out)
}

/// Next-state predictions from ground-truth windows over `truth`: output `k`
/// predicts `truth[k + window]`.
pub fn predict_sequential(net: &Network, strategy: Strategy, norm: &Normalizer, truth: &[Tensor]) -> Result<Vec<Tensor>> {
    check_strategy(strategy, norm)?;
    let w = net.input_window();
    if truth.len() <= w {
        return Err(Error::Dimension(format!(
            "{} frames leave nothing to predict with a window of {w}",
            truth.len()
        )));
    }
    truth.windows(w + 1).map(|win| predict_next(net, norm, &win[..w])).collect()
}

/// Autoregressive rollout of `n_steps` from `seed` frames, shifting each
/// prediction into the input window. A non-finite prediction aborts with the
/// 1-based step.
pub fn predict_regressive(
    net: &Network,
    strategy: Strategy,
    norm: &Normalizer,
    seed: &[Tensor],
    n_steps: usize,
) -> Result<Vec<Tensor>> {
    check_strategy(strategy, norm)?;
    let w = net.input_window();
    if seed.len() != w {
        return Err(Error::Dimension(format!(
            "{} needs {w} seed frames, got {}",
            net.kind(),
            seed.len()
        )));
    }
    let mut window: Vec<Tensor> = seed.to_vec();
    let mut out = Vec::with_capacity(n_steps);
    for step in 1..=n_steps {
        let next = predict_next(net, norm, &window).map_err(|e| match e {
            Error::Numeric(_) => Error::RolloutDiverged { step },
            other => other,
        })?;
        if !next.is_finite() {
            return Err(Error::RolloutDiverged { step });
        }
        window.remove(0);
        window.push(next.clone());
        out.push(next);
    }
    Ok(out)
}
