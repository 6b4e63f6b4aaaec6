//! Pulsating front profiles on a finite cylinder `(-a, a) x torus`.
//!
//! The profile `phi(z, t, x)` solves
//! `phi_t - D(a D phi) + q D phi + c phi_z - eps phi_zz = f(t, x, phi)` with
//! `D = d/dx + e d/dz`. With `dz = dx` the derivative `D` is taken along grid
//! diagonals, which makes the scheme a monotone M-matrix scheme; sub- and
//! supersolutions are built from eigenpairs of the same stencil, so all
//! comparison statements hold exactly on the grid.

mod barriers;
mod cylinder;
mod diagnostics;
mod iteration;

pub use barriers::{
    build_subsolution, build_supersolution, cylinder_eigenpair, cylinder_roots, CylinderEigen, CylinderRoots, SubSuper,
    Subsolution, Supersolution,
};
pub use cylinder::{period_map_contraction, solve_linear_periodic, BoundaryData, CylinderOperator, LinearSolve, ZScheme};
pub use diagnostics::{pin_offset, pinned_window, profile_diagnostics, PinnedWindow, ProfileReport};
pub use iteration::{
    continue_domain, eps_sweep, monotone_iteration, ContinuationReport, FrontContext, FrontOptions, FrontPath,
    SweepReport,
};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::medium::{ScalarField, TorusGrid};

/// Finite cylinder grid with `dz = dx` and nodes `z_k = -a + k dz`, `k = 0..=nz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CylinderGrid {
    pub a: f64,
    pub nz: usize,
    pub dz: f64,
    #[serde(skip)]
    pub base: TorusGrid,
}

impl CylinderGrid {
    /// Rounds `a` to the nearest half-length with an even number of cells of size `dx`.
    pub fn new(a: f64, base: TorusGrid) -> Result<Self> {
        let dz = base.dx();
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Config(format!("cylinder half-length must be positive, got {a}")));
        }
        let half = (a / dz).round().max(2.0) as usize;
        let nz = 2 * half;
        Ok(Self { a: half as f64 * dz, nz, dz, base })
    }

    pub fn z_at(&self, k: usize) -> f64 {
        -self.a + k as f64 * self.dz
    }

    /// Index of the node `z = 0`.
    pub fn center(&self) -> usize {
        self.nz / 2
    }

    pub fn n_planes(&self) -> usize {
        self.nz + 1
    }
}

/// Real field on cylinder nodes, stored `values[(j * (nz + 1) + k) * nx + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field3 {
    pub nz: usize,
    pub nt: usize,
    pub nx: usize,
    pub values: Vec<f64>,
}

impl Field3 {
    pub fn zeros(grid: &CylinderGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &CylinderGrid, v: f64) -> Self {
        let (nt, nx) = (grid.base.nt, grid.base.nx);
        Self { nz: grid.nz, nt, nx, values: vec![v; nt * grid.n_planes() * nx] }
    }

    pub fn from_fn(grid: &CylinderGrid, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for j in 0..out.nt {
            for k in 0..=out.nz {
                for i in 0..out.nx {
                    let idx = out.index(j, k, i);
                    out.values[idx] = f(k, j, i);
                }
            }
        }
        out
    }

    #[inline]
    pub fn index(&self, j: usize, k: usize, i: usize) -> usize {
        (j * (self.nz + 1) + k) * self.nx + i
    }

    #[inline]
    pub fn get(&self, k: usize, j: usize, i: usize) -> f64 {
        self.values[self.index(j, k, i)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, j: usize, i: usize, v: f64) {
        let idx = self.index(j, k, i);
        self.values[idx] = v;
    }

    /// All planes of one time level.
    pub fn level(&self, j: usize) -> &[f64] {
        let w = (self.nz + 1) * self.nx;
        &self.values[j * w..(j + 1) * w]
    }

    pub fn level_mut(&mut self, j: usize) -> &mut [f64] {
        let w = (self.nz + 1) * self.nx;
        &mut self.values[j * w..(j + 1) * w]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest positive part of `self - other`.
    pub fn max_excess(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a - b))
    }

    /// Mean over the torus of the plane `k`.
    pub fn plane_mean(&self, k: usize) -> f64 {
        let mut s = 0.0;
        for j in 0..self.nt {
            let base = self.index(j, k, 0);
            s += self.values[base..base + self.nx].iter().sum::<f64>();
        }
        s / (self.nt * self.nx) as f64
    }

    /// Largest `phi(k) - phi(k+1)` over all nodes (0 if monotone).
    pub fn z_monotone_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for j in 0..self.nt {
            for k in 0..self.nz {
                for i in 0..self.nx {
                    d = d.max(self.get(k, j, i) - self.get(k + 1, j, i));
                }
            }
        }
        d
    }

    /// Torus slice at plane `k`.
    pub fn plane(&self, k: usize, grid: &TorusGrid) -> ScalarField {
        ScalarField::from_fn(grid, |j, i| self.get(k, j, i))
    }
}

/// A computed front profile with its certificates.
#[derive(Debug, Clone)]
pub struct FrontProfile {
    pub grid: CylinderGrid,
    pub phi: Field3,
    pub p: ScalarField,
    pub c: f64,
    pub eps: f64,
    pub path: FrontPath,
    pub barriers: SubSuper,
    /// Fitted decay rates of the linearization at 0.
    pub roots: CylinderRoots,
    /// Outer iterations performed.
    pub iters: usize,
    /// Largest `phi_{n+1} - phi_n` over all outer steps.
    pub outer_defect: f64,
    /// Largest `phi(z) - phi(z + dz)` of the final profile.
    pub monotone_defect: f64,
    /// Largest violation of `theta <= phi_n <= zeta` over all iterates.
    pub sandwich_defect: f64,
    pub beta: f64,
    pub z_scheme: ZScheme,
    /// Translation of the barriers on the general path (0 on the KPP path).
    pub tau: f64,
    /// Largest period-map contraction factor measured during inner solves.
    pub measured_contraction: f64,
}

impl FrontProfile {
    pub fn sandwich_ok(&self, tol: f64) -> bool {
        self.sandwich_defect <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rounds_to_even_cells() {
        let base = TorusGrid::new(1.0, 1.0, 16, 16).unwrap();
        let g = CylinderGrid::new(15.0, base).unwrap();
        assert_eq!(g.nz, 480);
        assert_eq!(g.z_at(g.center()), 0.0);
        assert_eq!(g.z_at(0), -15.0);
        assert_eq!(g.z_at(g.nz), 15.0);
        assert!(CylinderGrid::new(0.0, base).is_err());
    }

    #[test]
    fn field_indexing() {
        let base = TorusGrid::new(1.0, 1.0, 8, 8).unwrap();
        let g = CylinderGrid::new(1.0, base).unwrap();
        let f = Field3::from_fn(&g, |k, j, i| (k * 100 + j * 10 + i) as f64);
        assert_eq!(f.get(3, 2, 1), 321.0);
        assert_eq!(f.plane(3, &base).get(2, 1), 321.0);
        assert_eq!(f.z_monotone_defect(), 0.0);
    }
}
