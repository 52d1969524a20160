use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Gradient-descent update rules over a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::config("learning_rate", format!("must be > 0, got {lr}")));
        }
        Ok(Optimizer {
            kind,
            lr,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one update from the gradients currently held in `params`.
    pub fn step(&mut self, params: &mut ParamStore) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.params_mut() {
                    for (w, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                        *w -= self.lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.len() != params.len() {
                    self.first_moment = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
                    self.second_moment = self.first_moment.clone();
                }
                let t = self.step as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for ((p, m), v) in params
                    .params_mut()
                    .iter_mut()
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    let grads = p.grad.data();
                    let (m, v) = (m.data_mut(), v.data_mut());
                    for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                        let g = grads[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        *w -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}
