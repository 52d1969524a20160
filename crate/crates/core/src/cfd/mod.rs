//! Boussinesq natural-convection cavity solver, NCFD dataset files and the
//! mass, momentum and energy residuals used to monitor surrogate rollouts.
//!
//! Fields are stored on an `nx × ny` node grid, row-major with `j` (height)
//! as the slow index and `j = 0` at the bottom. Boundary nodes are walls:
//! the hot wall is column `i = 0`, the cold wall column `i = nx - 1`, and
//! the horizontal walls are adiabatic. Gravity points along `-y`.

mod dataset;
mod projection;
mod residual;

pub use dataset::{
    generate_dataset, load_dataset, read_manifest, read_ncfd, write_manifest, write_ncfd, DatasetManifest,
    NcfdDataset, VariableBounds, VariableRange, NCFD_HEADER_BYTES, NCFD_MAGIC, NCFD_VERSION,
};
pub use residual::{
    residual_heat, residual_mass, residual_momentum, ResidualEvaluator, ResidualField,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use projection::Projector;

/// Largest admissible `max|u|·dt/min(dx, dy)`.
pub const CFL_LIMIT: f64 = 0.5;
/// Largest admissible cell divergence after projection.
pub const DIVERGENCE_TOLERANCE: f64 = 1e-8;
/// One standard atmosphere in Pa.
pub const ATMOSPHERE: f64 = 101_325.0;

/// Physical and numerical parameters of the cavity run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Grid nodes along x, including both wall columns.
    pub nx: usize,
    /// Grid nodes along y, including both wall rows.
    pub ny: usize,
    /// Time step in s.
    pub dt: f64,
    /// Side of the square cavity in m.
    pub length: f64,
    pub t_hot: f64,
    pub t_cold: f64,
    pub t_init: f64,
    /// Reference temperature of the buoyancy term.
    pub t_ref: f64,
    /// Reference pressure in Pa.
    pub p_ref: f64,
    /// Density in kg/m³.
    pub rho: f64,
    /// Kinematic viscosity in m²/s.
    pub nu: f64,
    /// Thermal diffusivity in m²/s.
    pub alpha: f64,
    /// Thermal expansion coefficient in 1/K.
    pub beta: f64,
    pub g: f64,
    /// Specific heat in J/(kg·K).
    pub cp: f64,
    /// Amplitude in K of uniform noise added to the initial interior
    /// temperature; zero gives the canonical start.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            nx: 64,
            ny: 64,
            dt: 0.01,
            length: 1.0,
            t_hot: 307.75,
            t_cold: 288.15,
            t_init: 293.0,
            t_ref: 293.0,
            p_ref: ATMOSPHERE,
            rho: 1.2,
            nu: 1.5e-5,
            alpha: 2.1e-5,
            beta: 3.4e-3,
            g: 9.81,
            cp: 1005.0,
            perturbation: 0.0,
            seed: 0,
        }
    }
}

impl SolverParams {
    pub fn with_grid(mut self, nx: usize, ny: usize) -> Self {
        self.nx = nx;
        self.ny = ny;
        self
    }

    pub fn dx(&self) -> f64 {
        self.length / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        self.length / (self.ny - 1) as f64
    }

    /// Dynamic viscosity `ρν`.
    pub fn mu_eff(&self) -> f64 {
        self.rho * self.nu
    }

    /// Thermal conductivity `ρ c_p α`, the diffusion coefficient acting on
    /// `T` (equivalently `ρα` acting on `h = c_p T`).
    pub fn alpha_eff(&self) -> f64 {
        self.rho * self.cp * self.alpha
    }

    /// Checks grid size, positivity and finiteness. Wall temperatures may be
    /// equal; see [`SolverParams::validate`].
    pub fn validate_numerics(&self) -> Result<()> {
        if self.nx < 4 || self.ny < 4 {
            return Err(Error::config(
                "nx",
                format!("grid must be at least 4×4 nodes, got {}×{}", self.nx, self.ny),
            ));
        }
        let positive = [
            ("dt", self.dt),
            ("length", self.length),
            ("rho", self.rho),
            ("nu", self.nu),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("cp", self.cp),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be finite and > 0, got {v}")));
            }
        }
        let finite = [
            ("t_hot", self.t_hot),
            ("t_cold", self.t_cold),
            ("t_init", self.t_init),
            ("t_ref", self.t_ref),
            ("p_ref", self.p_ref),
            ("g", self.g),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::config(name, format!("must be finite, got {v}")));
            }
        }
        if !(self.perturbation.is_finite() && self.perturbation >= 0.0) {
            return Err(Error::config("perturbation", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Full validation for a heated cavity run: numerics plus `T_hot > T_cold`.
    pub fn validate(&self) -> Result<()> {
        self.validate_numerics()?;
        if self.t_hot <= self.t_cold {
            return Err(Error::config(
                "t_hot",
                format!("hot wall {} K must exceed cold wall {} K", self.t_hot, self.t_cold),
            ));
        }
        Ok(())
    }
}

/// One snapshot of the cavity: velocity, temperature and the solver's
/// pressure, each `nx·ny` values row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub nx: usize,
    pub ny: usize,
    pub u_x: Vec<f64>,
    pub u_y: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
}

impl FlowState {
    pub fn new(nx: usize, ny: usize, u_x: Vec<f64>, u_y: Vec<f64>, t: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        let n = nx * ny;
        for (name, f) in [("u_x", &u_x), ("u_y", &u_y), ("T", &t), ("p", &p)] {
            if f.len() != n {
                return Err(Error::Dimension(format!(
                    "{name} has {} values, grid {nx}×{ny} needs {n}",
                    f.len()
                )));
            }
        }
        let s = FlowState { nx, ny, u_x, u_y, t, p };
        s.ensure_finite()?;
        Ok(s)
    }

    /// Builds a state from a `[3, ny, nx]` tensor of `(u_x, u_y, T)` with
    /// uniform pressure `p`.
    pub fn from_tensor(x: &Tensor, p: f64) -> Result<Self> {
        let s = x.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::Dimension(format!("flow tensor must be [3, ny, nx], got {s:?}")));
        }
        let (ny, nx) = (s[1], s[2]);
        let n = nx * ny;
        let d = x.data();
        FlowState::new(nx, ny, d[..n].to_vec(), d[n..2 * n].to_vec(), d[2 * n..].to_vec(), vec![p; n])
    }

    /// `(u_x, u_y, T)` stacked as `[3, ny, nx]`.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(3 * self.u_x.len());
        data.extend_from_slice(&self.u_x);
        data.extend_from_slice(&self.u_y);
        data.extend_from_slice(&self.t);
        Tensor::from_parts(vec![3, self.ny, self.nx], data)
    }

    pub fn max_speed(&self) -> f64 {
        self.u_x
            .iter()
            .zip(&self.u_y)
            .map(|(u, v)| u.hypot(*v))
            .fold(0.0, f64::max)
    }

    fn ensure_finite(&self) -> Result<()> {
        for (name, f) in [("u_x", &self.u_x), ("u_y", &self.u_y), ("T", &self.t), ("p", &self.p)] {
            if let Some(k) = f.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("{name} is non-finite at node {k}")));
            }
        }
        Ok(())
    }

    fn check_grid(&self, params: &SolverParams) -> Result<()> {
        if (self.nx, self.ny) != (params.nx, params.ny) {
            return Err(Error::Dimension(format!(
                "state grid {}×{} differs from parameters {}×{}",
                self.nx, self.ny, params.nx, params.ny
            )));
        }
        Ok(())
    }
}

/// The initial cavity: fluid at rest at `t_init` (plus optional seeded
/// noise), wall columns at their fixed temperatures, pressure `p_ref`.
pub fn init_cavity(params: &SolverParams) -> Result<FlowState> {
    params.validate()?;
    let (nx, ny) = (params.nx, params.ny);
    let mut t = vec![params.t_init; nx * ny];
    if params.perturbation > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                t[i + j * nx] += params.perturbation * rng.gen_range(-1.0..1.0);
            }
        }
    }
    apply_temperature_bc(&mut t, params);
    Ok(FlowState {
        nx,
        ny,
        u_x: vec![0.0; nx * ny],
        u_y: vec![0.0; nx * ny],
        t,
        p: vec![params.p_ref; nx * ny],
    })
}

/// Fixed temperatures on the vertical walls (corners included) and zero
/// normal gradient on the horizontal walls.
fn apply_temperature_bc(t: &mut [f64], params: &SolverParams) {
    let (nx, ny) = (params.nx, params.ny);
    for j in 0..ny {
        t[j * nx] = params.t_hot;
        t[nx - 1 + j * nx] = params.t_cold;
    }
    for i in 1..nx - 1 {
        t[i] = t[i + nx];
        t[i + (ny - 1) * nx] = t[i + (ny - 2) * nx];
    }
}

/// Time-stepping solver with the pressure system factored once.
///
/// Each step:
/// 1. `T ← T + dt(−u·∇T + α∇²T)`, then the temperature BCs;
/// 2. `u* ← u + dt(−u·∇u + ν∇²u + gβ(T_new − T_ref)ŷ)` on interior nodes;
/// 3. `u ← u* − Dᵀλ` with `D Dᵀ λ = D u*`, and `p = p_ref − ρλ/dt`.
///
/// Advection is first-order upwind, diffusion second-order central.
pub struct CavitySolver {
    params: SolverParams,
    projector: Projector,
    steps: usize,
}

impl CavitySolver {
    pub fn new(params: SolverParams) -> Result<Self> {
        params.validate_numerics()?;
        let projector = Projector::new(params.nx, params.ny, params.dx(), params.dy())?;
        Ok(CavitySolver {
            params,
            projector,
            steps: 0,
        })
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    /// Steps taken so far; labels stability errors.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&mut self, state: &FlowState) -> Result<FlowState> {
        let prm = &self.params;
        state.check_grid(prm)?;
        state.ensure_finite()?;
        let cfl = state.max_speed() * prm.dt / prm.dx().min(prm.dy());
        if cfl > CFL_LIMIT {
            return Err(Error::Stability {
                step: self.steps,
                cfl,
                limit: CFL_LIMIT,
            });
        }
        let (nx, ny) = (prm.nx, prm.ny);
        let st = Stencil::new(prm);

        let mut t = state.t.clone();
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = i + j * nx;
                t[k] = state.t[k]
                    + prm.dt
                        * (-st.upwind(&state.u_x, &state.u_y, &state.t, k)
                            + prm.alpha * st.laplacian(&state.t, k));
            }
        }
        apply_temperature_bc(&mut t, prm);

        let mut ux = vec![0.0; nx * ny];
        let mut uy = vec![0.0; nx * ny];
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = i + j * nx;
                ux[k] = state.u_x[k]
                    + prm.dt
                        * (-st.upwind(&state.u_x, &state.u_y, &state.u_x, k)
                            + prm.nu * st.laplacian(&state.u_x, k));
                uy[k] = state.u_y[k]
                    + prm.dt
                        * (-st.upwind(&state.u_x, &state.u_y, &state.u_y, k)
                            + prm.nu * st.laplacian(&state.u_y, k)
                            + prm.g * prm.beta * (t[k] - prm.t_ref));
            }
        }
        let lam = self.projector.project(&mut ux, &mut uy);
        let worst = self
            .projector
            .divergence(&ux, &uy)
            .iter()
            .fold(0.0_f64, |m, d| m.max(d.abs()));
        if !(worst < DIVERGENCE_TOLERANCE) {
            return Err(Error::Solver(format!(
                "projection left divergence {worst:e} at step {}",
                self.steps
            )));
        }
        let p = node_pressure(&lam, self.projector.cells(), nx, ny, prm.p_ref, -prm.rho / prm.dt);
        let next = FlowState {
            nx,
            ny,
            u_x: ux,
            u_y: uy,
            t,
            p,
        };
        next.ensure_finite()
            .map_err(|e| Error::Solver(format!("step {} produced {e}", self.steps)))?;
        self.steps += 1;
        Ok(next)
    }
}

/// Node pressure `p_ref + scale·λ̄`, with `λ̄` the mean over the cells
/// touching each node.
fn node_pressure(lam: &[f64], (cx, cy): (usize, usize), nx: usize, ny: usize, p_ref: f64, scale: f64) -> Vec<f64> {
    let mut p = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let mut sum = 0.0;
            let mut count = 0.0;
            for cj in j.saturating_sub(1)..=j.min(cy - 1) {
                for ci in i.saturating_sub(1)..=i.min(cx - 1) {
                    sum += lam[ci + cj * cx];
                    count += 1.0;
                }
            }
            p[i + j * nx] = p_ref + scale * sum / count;
        }
    }
    p
}

/// Advances `state` by one step. Builds the pressure factorization on every
/// call; use [`CavitySolver`] for runs.
pub fn step_flow(state: &FlowState, params: &SolverParams) -> Result<FlowState> {
    CavitySolver::new(params.clone())?.step(state)
}

/// Interior-node finite-difference stencils shared by the solver and the
/// residuals.
pub(crate) struct Stencil {
    nx: usize,
    dx: f64,
    dy: f64,
}

impl Stencil {
    pub(crate) fn new(params: &SolverParams) -> Self {
        Stencil {
            nx: params.nx,
            dx: params.dx(),
            dy: params.dy(),
        }
    }

    /// First-order upwind `u·∇f` at node `k`.
    #[inline]
    pub(crate) fn upwind(&self, ux: &[f64], uy: &[f64], f: &[f64], k: usize) -> f64 {
        let (u, v) = (ux[k], uy[k]);
        let fx = if u > 0.0 {
            (f[k] - f[k - 1]) / self.dx
        } else {
            (f[k + 1] - f[k]) / self.dx
        };
        let fy = if v > 0.0 {
            (f[k] - f[k - self.nx]) / self.dy
        } else {
            (f[k + self.nx] - f[k]) / self.dy
        };
        u * fx + v * fy
    }

    #[inline]
    pub(crate) fn laplacian(&self, f: &[f64], k: usize) -> f64 {
        (f[k + 1] - 2.0 * f[k] + f[k - 1]) / (self.dx * self.dx)
            + (f[k + self.nx] - 2.0 * f[k] + f[k - self.nx]) / (self.dy * self.dy)
    }

    /// Central-difference divergence of `(fx, fy)` at node `k`.
    #[inline]
    pub(crate) fn central_divergence(&self, fx: &[f64], fy: &[f64], k: usize) -> f64 {
        (fx[k + 1] - fx[k - 1]) / (2.0 * self.dx) + (fy[k + self.nx] - fy[k - self.nx]) / (2.0 * self.dy)
    }
}
