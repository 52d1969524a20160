use serde::{Deserialize, Serialize};

use super::{MetricsRecord, ThresholdConfig};
use crate::cfd::{FlowState, ResidualEvaluator, SolverParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Max-norms of the three residual fields for one state pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub mass: f64,
    pub momentum: f64,
    pub heat: f64,
}

/// Largest residual norms between consecutive solver states over the
/// default 64×64, 1000-step cavity run, rounded up. Mass and momentum are
/// zero up to rounding; the heat residual carries the kinetic-energy and
/// gravity-work terms the Boussinesq temperature update leaves out.
pub const SOLVER_PAIR_RESIDUAL_BOUNDS: ResidualNorms = ResidualNorms {
    mass: 1e-12,
    momentum: 1e-12,
    heat: 4.0,
};

/// Residual norms above which the surrogate hands back to the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualThresholds {
    pub mass: f64,
    pub momentum: f64,
    pub heat: f64,
}

impl Default for ResidualThresholds {
    /// Ten times [`SOLVER_PAIR_RESIDUAL_BOUNDS`].
    fn default() -> Self {
        let b = SOLVER_PAIR_RESIDUAL_BOUNDS;
        ResidualThresholds {
            mass: 10.0 * b.mass,
            momentum: 10.0 * b.momentum,
            heat: 10.0 * b.heat,
        }
    }
}

impl ResidualThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mass", self.mass), ("momentum", self.momentum), ("heat", self.heat)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    format!("repit.{name}"),
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Residual norms of one physical frame pair.
pub fn pair_residuals(ev: &ResidualEvaluator, prev: &Tensor, next: &Tensor) -> Result<ResidualNorms> {
    let p = ev.params().p_ref;
    let a = FlowState::from_tensor(prev, p)?;
    let b = FlowState::from_tensor(next, p)?;
    Ok(ResidualNorms {
        mass: ev.mass(&a, &b)?.norm,
        momentum: ev.momentum(&a, &b)?.norm,
        heat: ev.heat(&a, &b)?.norm,
    })
}

/// Residual norms of each consecutive pair in `states`.
pub fn monitor_residuals(states: &[Tensor], params: &SolverParams) -> Result<Vec<ResidualNorms>> {
    if states.len() < 2 {
        return Err(Error::Usage("residual monitoring needs at least two states".into()));
    }
    let ev = ResidualEvaluator::new(params)?;
    states.windows(2).map(|w| pair_residuals(&ev, &w[0], &w[1])).collect()
}

/// First 1-based step at which each variable's error strictly exceeds its
/// threshold, `None` if it never does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizons {
    pub t: Option<usize>,
    pub u_x: Option<usize>,
    pub u_y: Option<usize>,
}

pub fn threshold_horizon(series: &[MetricsRecord], tau: &ThresholdConfig) -> Horizons {
    let first = |f: fn(&MetricsRecord) -> f64, limit: f64| series.iter().find(|r| f(r) > limit).map(|r| r.step);
    Horizons {
        t: first(|r| r.max_err_t, tau.t),
        u_x: first(|r| r.max_err_ux, tau.u_x),
        u_y: first(|r| r.max_err_uy, tau.u_y),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwitchDecision {
    ContinueDl,
    /// Hand over to the solver at this 1-based step.
    SwitchToCfd { step: usize },
}

/// The first step at which any residual norm strictly exceeds its
/// threshold.
pub fn repit_switch(series: &[ResidualNorms], threshold: &ResidualThresholds) -> Result<SwitchDecision> {
    threshold.validate()?;
    Ok(series
        .iter()
        .position(|r| r.mass > threshold.mass || r.momentum > threshold.momentum || r.heat > threshold.heat)
        .map_or(SwitchDecision::ContinueDl, |k| SwitchDecision::SwitchToCfd { step: k + 1 }))
}
