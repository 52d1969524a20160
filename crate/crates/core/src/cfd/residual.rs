//! Pointwise imbalance of the conservation laws between two consecutive
//! states, discretized with the solver's own stencils: forward Euler in
//! time, upwind advection and central diffusion evaluated at `prev`.
//!
//! Sign conventions (Boussinesq, gravity along `-y`):
//!
//! ```text
//! mass:     ρ ∇·u_next
//! momentum: ρ(∂u/∂t + u·∇u) + ∇p − μ_eff ∇²u − ρgβ(T_next − T_ref) ŷ
//! energy:   ρc_p(∂T/∂t + u·∇T) − α_eff ∇²T + ρ(∂K/∂t + ∇·(uK)) − ∂p/∂t + ρ g u_y
//! ```
//!
//! with `K = ½|u|²`. For incompressible flow the stress divergence
//! `∇·(μ_eff(∇u + ∇uᵀ))` reduces to `μ_eff ∇²u`.
//!
//! Surrogate predictions carry no pressure, so the momentum residual uses
//! the pressure that best balances the remaining terms: the imbalance is
//! projected onto the complement of the discrete gradients, the same
//! projection the solver applies. Supplied pressures therefore do not enter
//! any residual, and `∂p/∂t` is taken as zero.

use super::projection::Projector;
use super::{FlowState, SolverParams, Stencil};
use crate::error::{Error, Result};

/// Absolute residual per node (momentum, energy) or per cell (mass), with
/// its max-norm. Boundary nodes carry zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
    pub norm: f64,
}

impl ResidualField {
    fn from_values(nx: usize, ny: usize, values: Vec<f64>) -> Self {
        let norm = values.iter().fold(0.0_f64, |m, v| m.max(*v));
        ResidualField { nx, ny, values, norm }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i + j * self.nx]
    }
}

/// Residual operators for one grid, holding the factored projection.
pub struct ResidualEvaluator {
    params: SolverParams,
    projector: Projector,
}

impl ResidualEvaluator {
    pub fn new(params: &SolverParams) -> Result<Self> {
        params.validate_numerics()?;
        Ok(ResidualEvaluator {
            params: params.clone(),
            projector: Projector::new(params.nx, params.ny, params.dx(), params.dy())?,
        })
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    fn check(&self, prev: &FlowState, next: &FlowState) -> Result<()> {
        for (name, s) in [("prev", prev), ("next", next)] {
            if (s.nx, s.ny) != (self.params.nx, self.params.ny) {
                return Err(Error::Dimension(format!(
                    "{name} grid {}×{} differs from parameters {}×{}",
                    s.nx, s.ny, self.params.nx, self.params.ny
                )));
            }
        }
        Ok(())
    }

    /// `ρ|∇·u_next|` per cell, `(nx-1)×(ny-1)`.
    pub fn mass(&self, prev: &FlowState, next: &FlowState) -> Result<ResidualField> {
        self.check(prev, next)?;
        let (cx, cy) = self.projector.cells();
        let rho = self.params.rho;
        let div = self.projector.divergence(&next.u_x, &next.u_y);
        Ok(ResidualField::from_values(cx, cy, div.into_iter().map(|d| rho * d.abs()).collect()))
    }

    /// Per-node `max(|R_x|, |R_y|)` of the pressure-balanced momentum
    /// imbalance.
    pub fn momentum(&self, prev: &FlowState, next: &FlowState) -> Result<ResidualField> {
        self.check(prev, next)?;
        let prm = &self.params;
        let (nx, ny) = (prm.nx, prm.ny);
        let st = Stencil::new(prm);
        let mut rx = vec![0.0; nx * ny];
        let mut ry = vec![0.0; nx * ny];
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = i + j * nx;
                rx[k] = prm.rho
                    * ((next.u_x[k] - prev.u_x[k]) / prm.dt
                        + st.upwind(&prev.u_x, &prev.u_y, &prev.u_x, k))
                    - prm.mu_eff() * st.laplacian(&prev.u_x, k);
                ry[k] = prm.rho
                    * ((next.u_y[k] - prev.u_y[k]) / prm.dt
                        + st.upwind(&prev.u_x, &prev.u_y, &prev.u_y, k)
                        - prm.g * prm.beta * (next.t[k] - prm.t_ref))
                    - prm.mu_eff() * st.laplacian(&prev.u_y, k);
            }
        }
        self.projector.project(&mut rx, &mut ry);
        let values = rx.iter().zip(&ry).map(|(a, b)| a.abs().max(b.abs())).collect();
        Ok(ResidualField::from_values(nx, ny, values))
    }

    /// Per-node absolute energy imbalance with `h = c_p T`.
    pub fn heat(&self, prev: &FlowState, next: &FlowState) -> Result<ResidualField> {
        self.check(prev, next)?;
        let prm = &self.params;
        let (nx, ny) = (prm.nx, prm.ny);
        let st = Stencil::new(prm);
        let kinetic = |s: &FlowState| -> Vec<f64> {
            s.u_x.iter().zip(&s.u_y).map(|(u, v)| 0.5 * (u * u + v * v)).collect()
        };
        let (k0, k1) = (kinetic(prev), kinetic(next));
        let flux_x: Vec<f64> = prev.u_x.iter().zip(&k0).map(|(u, k)| u * k).collect();
        let flux_y: Vec<f64> = prev.u_y.iter().zip(&k0).map(|(v, k)| v * k).collect();
        let mut values = vec![0.0; nx * ny];
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = i + j * nx;
                let enthalpy = prm.rho
                    * prm.cp
                    * ((next.t[k] - prev.t[k]) / prm.dt
                        + st.upwind(&prev.u_x, &prev.u_y, &prev.t, k))
                    - prm.alpha_eff() * st.laplacian(&prev.t, k);
                let kinetic = prm.rho
                    * ((k1[k] - k0[k]) / prm.dt + st.central_divergence(&flux_x, &flux_y, k));
                let work = prm.rho * prm.g * prev.u_y[k];
                values[k] = (enthalpy + kinetic + work).abs();
            }
        }
        Ok(ResidualField::from_values(nx, ny, values))
    }
}

pub fn residual_mass(prev: &FlowState, next: &FlowState, params: &SolverParams) -> Result<ResidualField> {
    ResidualEvaluator::new(params)?.mass(prev, next)
}

pub fn residual_momentum(prev: &FlowState, next: &FlowState, params: &SolverParams) -> Result<ResidualField> {
    ResidualEvaluator::new(params)?.momentum(prev, next)
}

pub fn residual_heat(prev: &FlowState, next: &FlowState, params: &SolverParams) -> Result<ResidualField> {
    ResidualEvaluator::new(params)?.heat(prev, next)
}
