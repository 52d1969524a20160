//! Discrete divergence and exact pressure projection.
//!
//! Velocities live on grid nodes and pressure on the cells between them.
//! The divergence of cell `(ci, cj)` is the central difference across the
//! cell, averaging the two nodes on each face:
//!
//! ```text
//! div = [(u(ci+1,cj) + u(ci+1,cj+1)) - (u(ci,cj) + u(ci,cj+1))] / (2 dx)
//!     + [(v(ci,cj+1) + v(ci+1,cj+1)) - (v(ci,cj) + v(ci+1,cj))] / (2 dy)
//! ```
//!
//! Projection subtracts `Dᵀλ` from the interior nodes, with `λ` solving
//! `D Dᵀ λ = D u`. `D Dᵀ` is singular on the constant and checkerboard cell
//! fields; both are pinned out by fixing `λ = 0` on the first two cells,
//! which leaves an SPD system factored once with a sparse Cholesky.

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};

const PINNED: usize = 2;

pub(crate) struct Projector {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    chol: CscCholesky<f64>,
}

impl Projector {
    pub(crate) fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        let (cx, cy) = (nx - 1, ny - 1);
        let n = cx * cy - PINNED;
        let mut coo = CooMatrix::new(n, n);
        // Each interior node contributes the outer product of its column of
        // D (one per velocity component) to D Dᵀ.
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let cells = [
                    (i - 1) + (j - 1) * cx,
                    i + (j - 1) * cx,
                    (i - 1) + j * cx,
                    i + j * cx,
                ];
                let ax = 1.0 / (2.0 * dx);
                let ay = 1.0 / (2.0 * dy);
                let cols = [[ax, -ax, ax, -ax], [ay, ay, -ay, -ay]];
                for col in cols {
                    for (a, &ka) in cells.iter().enumerate() {
                        for (b, &kb) in cells.iter().enumerate() {
                            if ka >= PINNED && kb >= PINNED {
                                coo.push(ka - PINNED, kb - PINNED, col[a] * col[b]);
                            }
                        }
                    }
                }
            }
        }
        let m = CscMatrix::from(&coo);
        let chol = CscCholesky::factor(&m)
            .map_err(|e| Error::Solver(format!("pressure system factorization failed: {e}")))?;
        Ok(Projector {
            nx,
            ny,
            dx,
            dy,
            chol,
        })
    }

    pub(crate) fn cells(&self) -> (usize, usize) {
        (self.nx - 1, self.ny - 1)
    }

    /// Cell divergences of full node fields, row-major over `(nx-1)×(ny-1)`.
    pub(crate) fn divergence(&self, ux: &[f64], uy: &[f64]) -> Vec<f64> {
        divergence(self.nx, self.ny, self.dx, self.dy, ux, uy)
    }

    /// Removes the range of `Dᵀ` from the interior nodes of `(ux, uy)`.
    /// Boundary entries must be zero on entry and are left untouched.
    /// Returns the cell multiplier `λ`.
    pub(crate) fn project(&self, ux: &mut [f64], uy: &mut [f64]) -> Vec<f64> {
        let r = self.divergence(ux, uy);
        let mut rhs = DMatrix::from_column_slice(r.len() - PINNED, 1, &r[PINNED..]);
        self.chol.solve_mut(&mut rhs);
        let mut lam = vec![0.0; r.len()];
        lam[PINNED..].copy_from_slice(rhs.as_slice());
        self.subtract_gradient(&lam, ux, uy);
        lam
    }

    fn subtract_gradient(&self, lam: &[f64], ux: &mut [f64], uy: &mut [f64]) {
        let (nx, ny, cx) = (self.nx, self.ny, self.nx - 1);
        let (ax, ay) = (1.0 / (2.0 * self.dx), 1.0 / (2.0 * self.dy));
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let sw = lam[(i - 1) + (j - 1) * cx];
                let se = lam[i + (j - 1) * cx];
                let nw = lam[(i - 1) + j * cx];
                let ne = lam[i + j * cx];
                let k = i + j * nx;
                ux[k] -= ax * (sw + nw - se - ne);
                uy[k] -= ay * (sw + se - nw - ne);
            }
        }
    }
}

pub(crate) fn divergence(nx: usize, ny: usize, dx: f64, dy: f64, ux: &[f64], uy: &[f64]) -> Vec<f64> {
    let (cx, cy) = (nx - 1, ny - 1);
    let mut out = vec![0.0; cx * cy];
    for cj in 0..cy {
        for ci in 0..cx {
            let sw = ci + cj * nx;
            let (se, nw, ne) = (sw + 1, sw + nx, sw + nx + 1);
            out[ci + cj * cx] = (ux[se] + ux[ne] - ux[sw] - ux[nw]) / (2.0 * dx)
                + (uy[nw] + uy[ne] - uy[sw] - uy[se]) / (2.0 * dy);
        }
    }
    out
}
