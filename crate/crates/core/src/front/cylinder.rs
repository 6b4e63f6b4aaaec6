//! Linear periodic-in-time solves on the cylinder.

use serde::Serialize;

use super::{CylinderGrid, Field3};
use crate::error::{Error, Result};
use crate::linalg::{BandedLu, BandedMatrix};
use crate::medium::{CoefficientSet, ScalarField};

/// Discretization of `c phi_z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ZScheme {
    /// Centered; used when `eps / dz^2 >= |c| / (2 dz)` keeps the scheme monotone.
    Centered,
    /// First-order upwind otherwise.
    Upwind,
}

impl ZScheme {
    pub fn choose(c: f64, eps: f64, h: f64) -> Self {
        if eps / (h * h) >= c.abs() / (2.0 * h) {
            ZScheme::Centered
        } else {
            ZScheme::Upwind
        }
    }
}

/// Row of the spatial operator `B` at one torus node (the same on every plane).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Stencil {
    pub diag: f64,
    /// Coefficient of `(k + e, i + 1)`.
    pub fwd: f64,
    /// Coefficient of `(k - e, i - 1)`.
    pub bwd: f64,
    /// Coefficient of `(k + 1, i)`.
    pub zp: f64,
    /// Coefficient of `(k - 1, i)`.
    pub zm: f64,
}

pub(crate) fn stencil_row(a: &[f64], q: &[f64], i: usize, c: f64, eps: f64, h: f64, z_scheme: ZScheme) -> Stencil {
    let nx = a.len();
    let ip = (i + 1) % nx;
    let im = (i + nx - 1) % nx;
    let a_plus = 0.5 * (a[i] + a[ip]);
    let a_minus = 0.5 * (a[i] + a[im]);
    let h2 = h * h;
    let mut s = Stencil {
        diag: (a_plus + a_minus) / h2 + 2.0 * eps / h2,
        fwd: -a_plus / h2 + q[i] / (2.0 * h),
        bwd: -a_minus / h2 - q[i] / (2.0 * h),
        zp: -eps / h2,
        zm: -eps / h2,
    };
    match z_scheme {
        ZScheme::Centered => {
            s.zp += c / (2.0 * h);
            s.zm -= c / (2.0 * h);
        }
        ZScheme::Upwind => {
            if c >= 0.0 {
                s.diag += c / h;
                s.zm -= c / h;
            } else {
                s.diag -= c / h;
                s.zp += c / h;
            }
        }
    }
    s
}

/// Dirichlet data on the planes `z = -a` and `z = a`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub left: ScalarField,
    pub right: ScalarField,
}

impl BoundaryData {
    pub fn zeros(grid: &CylinderGrid) -> Self {
        Self { left: ScalarField::constant(&grid.base, 0.0), right: ScalarField::constant(&grid.base, 0.0) }
    }

    fn time_independent(&self) -> bool {
        rows_equal(&self.left.values, self.left.nx) && rows_equal(&self.right.values, self.right.nx)
    }
}

fn rows_equal(values: &[f64], width: usize) -> bool {
    let first = &values[..width];
    values.chunks(width).all(|r| r == first)
}

/// `L_eps + beta` on the cylinder with cached factorizations.
///
/// The implicit Euler step matrix at level `j` is `(1/dt + beta) I + B_j`.
pub struct CylinderOperator {
    pub grid: CylinderGrid,
    pub c: f64,
    pub eps: f64,
    pub beta: f64,
    pub direction: i64,
    pub z_scheme: ZScheme,
    /// Coefficients do not depend on t.
    pub time_independent: bool,
    stencils: Vec<Stencil>,
    factors: Vec<BandedLu>,
    factor_of_level: Vec<usize>,
    stationary: Option<BandedLu>,
}

impl std::fmt::Debug for CylinderOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CylinderOperator")
            .field("grid", &self.grid)
            .field("c", &self.c)
            .field("eps", &self.eps)
            .field("beta", &self.beta)
            .field("direction", &self.direction)
            .field("z_scheme", &self.z_scheme)
            .field("time_independent", &self.time_independent)
            .field("factors", &self.factors.len())
            .finish()
    }
}

impl CylinderOperator {
    pub fn new(coeffs: &CoefficientSet, grid: CylinderGrid, c: f64, eps: f64, beta: f64, direction: f64) -> Result<Self> {
        if !(eps >= 0.0) {
            return Err(Error::Config(format!("regularization must be >= 0, got {eps}")));
        }
        let g = grid.base;
        let h = grid.dz;
        let z_scheme = ZScheme::choose(c, eps, h);
        let mut stencils = Vec::with_capacity(g.len());
        for j in 0..g.nt {
            let (a, q) = (coeffs.a.row(j), coeffs.q.row(j));
            for i in 0..g.nx {
                let s = stencil_row(a, q, i, c, eps, h, z_scheme);
                if s.fwd > 0.0 || s.bwd > 0.0 || s.zp > 0.0 || s.zm > 0.0 {
                    return Err(Error::Scheme(format!(
                        "cylinder stencil not monotone at node (t={j}, x={i}): drift {} too large for dx = {h}",
                        q[i]
                    )));
                }
                stencils.push(s);
            }
        }
        let time_independent = rows_equal(&coeffs.a.values, g.nx) && rows_equal(&coeffs.q.values, g.nx);
        let direction = if direction < 0.0 { -1 } else { 1 };
        let mut op = Self {
            grid,
            c,
            eps,
            beta,
            direction,
            z_scheme,
            time_independent,
            stencils,
            factors: Vec::new(),
            factor_of_level: Vec::new(),
            stationary: None,
        };
        if time_independent {
            op.stationary = Some(op.assemble(0, beta)?.factorize()?);
        }
        let shift = 1.0 / g.dt() + beta;
        let mut reps: Vec<usize> = Vec::new();
        for j in 0..g.nt {
            let row = &op.stencils[j * g.nx..(j + 1) * g.nx];
            if let Some(pos) = reps.iter().position(|&r| &op.stencils[r * g.nx..(r + 1) * g.nx] == row) {
                op.factor_of_level.push(pos);
                continue;
            }
            let lu = op.assemble(j, shift)?.factorize()?;
            op.factors.push(lu);
            reps.push(j);
            op.factor_of_level.push(op.factors.len() - 1);
        }
        Ok(op)
    }

    pub(crate) fn stencil(&self, j: usize, i: usize) -> Stencil {
        self.stencils[(j % self.grid.base.nt) * self.grid.base.nx + i]
    }

    fn interior_len(&self) -> usize {
        (self.grid.nz - 1) * self.grid.base.nx
    }

    fn bandwidth(&self) -> usize {
        let nx = self.grid.base.nx;
        if self.direction > 0 {
            nx + 1
        } else {
            2 * nx - 1
        }
    }

    /// Neighbours `(plane, x index, coefficient)` of node `(k, i)` at level `j`.
    #[inline]
    fn neighbours(&self, j: usize, k: usize, i: usize) -> [(usize, usize, f64); 4] {
        let nx = self.grid.base.nx;
        let s = self.stencil(j, i);
        let e = self.direction;
        let kf = (k as i64 + e) as usize;
        let kb = (k as i64 - e) as usize;
        [(kf, (i + 1) % nx, s.fwd), (kb, (i + nx - 1) % nx, s.bwd), (k + 1, i, s.zp), (k - 1, i, s.zm)]
    }

    fn assemble(&self, j: usize, shift: f64) -> Result<BandedMatrix> {
        let nx = self.grid.base.nx;
        let nz = self.grid.nz;
        let bw = self.bandwidth();
        let mut m = BandedMatrix::zeros(self.interior_len(), bw, bw);
        for k in 1..nz {
            for i in 0..nx {
                let row = (k - 1) * nx + i;
                m.add(row, row, shift + self.stencil(j, i).diag);
                for (kk, ii, coef) in self.neighbours(j, k, i) {
                    if kk >= 1 && kk < nz {
                        m.add(row, (kk - 1) * nx + ii, coef);
                    }
                }
            }
        }
        Ok(m)
    }

    /// Right-hand side of the level-`j` system: `rhs - (boundary couplings)`.
    fn load(&self, j: usize, rhs: &Field3, bc: &BoundaryData, out: &mut [f64]) {
        let nx = self.grid.base.nx;
        let nz = self.grid.nz;
        for k in 1..nz {
            for i in 0..nx {
                let mut v = rhs.get(k, j, i);
                for (kk, ii, coef) in self.neighbours(j, k, i) {
                    if kk == 0 {
                        v -= coef * bc.left.get(j, ii);
                    } else if kk == nz {
                        v -= coef * bc.right.get(j, ii);
                    }
                }
                out[(k - 1) * nx + i] = v;
            }
        }
    }

    /// One implicit step from interior data `u` at level `j` to level `j + 1`.
    fn step(&self, j: usize, rhs: &Field3, bc: &BoundaryData, u: &mut [f64], work: &mut [f64]) {
        let nt = self.grid.base.nt;
        let jn = (j + 1) % nt;
        let inv_dt = 1.0 / self.grid.base.dt();
        self.load(jn, rhs, bc, work);
        for (w, x) in work.iter_mut().zip(u.iter()) {
            *w += inv_dt * x;
        }
        self.factors[self.factor_of_level[jn]].solve_in_place(work);
        u.copy_from_slice(work);
    }

    /// Discrete `L_eps u` (without `beta` and without reaction) at interior
    /// node `(k, j, i)`; the time derivative is the backward difference.
    pub fn apply(&self, u: &Field3, k: usize, j: usize, i: usize) -> f64 {
        let nt = self.grid.base.nt;
        let jp = (j + nt - 1) % nt;
        let s = self.stencil(j, i);
        let mut v = (u.get(k, j, i) - u.get(k, jp, i)) / self.grid.base.dt() + s.diag * u.get(k, j, i);
        for (kk, ii, coef) in self.neighbours(j, k, i) {
            v += coef * u.get(kk, j, ii);
        }
        v
    }

    fn interior_of(&self, f: &Field3, j: usize) -> Vec<f64> {
        let nx = self.grid.base.nx;
        let lvl = f.level(j);
        lvl[nx..self.grid.nz * nx].to_vec()
    }

    fn write_level(&self, f: &mut Field3, j: usize, interior: &[f64], bc: &BoundaryData) {
        let nx = self.grid.base.nx;
        let nz = self.grid.nz;
        let lvl = f.level_mut(j);
        lvl[..nx].copy_from_slice(bc.left.row(j));
        lvl[nx..nz * nx].copy_from_slice(interior);
        lvl[nz * nx..].copy_from_slice(bc.right.row(j));
    }

    /// Period map `G`: marches interior data at `t = 0` over one period.
    pub fn period_map(&self, rhs: &Field3, bc: &BoundaryData, u0: &[f64]) -> Vec<f64> {
        let mut u = u0.to_vec();
        let mut work = vec![0.0; u.len()];
        for j in 0..self.grid.base.nt {
            self.step(j, rhs, bc, &mut u, &mut work);
        }
        u
    }
}

/// Result of a periodic linear solve.
#[derive(Debug, Clone)]
pub struct LinearSolve {
    pub u: Field3,
    /// Period-map applications used (0 for a stationary solve).
    pub periods: usize,
    /// Largest ratio of successive period-to-period changes observed.
    pub contraction: f64,
}

/// Solves `(L_eps + beta) u = rhs`, t-periodic, with Dirichlet data `bc`.
///
/// Iterates the period map to its fixed point starting from `warm` (or 0).
/// With time-independent coefficients and data the periodic solution is
/// the stationary one and is obtained by a single solve.
pub fn solve_linear_periodic(
    op: &CylinderOperator,
    rhs: &Field3,
    bc: &BoundaryData,
    warm: Option<&Field3>,
    tol: f64,
    max_periods: usize,
) -> Result<LinearSolve> {
    let g = op.grid.base;
    let n = op.interior_len();
    let mut out = Field3::zeros(&op.grid);
    let data_static = rows_equal(&rhs.values, rhs.values.len() / g.nt) && bc.time_independent();
    if let (Some(lu), true) = (&op.stationary, data_static) {
        let mut u = vec![0.0; n];
        op.load(0, rhs, bc, &mut u);
        lu.solve_in_place(&mut u);
        for j in 0..g.nt {
            op.write_level(&mut out, j, &u, bc);
        }
        return Ok(LinearSolve { u: out, periods: 0, contraction: 0.0 });
    }

    let mut u = match warm {
        Some(w) => op.interior_of(w, 0),
        None => vec![0.0; n],
    };
    let mut work = vec![0.0; n];
    let mut levels: Vec<Vec<f64>> = vec![Vec::new(); g.nt];
    let mut prev_change = f64::NAN;
    let mut contraction: f64 = 0.0;
    for period in 1..=max_periods {
        let start = u.clone();
        for j in 0..g.nt {
            if j > 0 {
                levels[j].clone_from(&u);
            }
            op.step(j, rhs, bc, &mut u, &mut work);
        }
        let change = u.iter().zip(&start).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if !change.is_finite() {
            return Err(Error::Numerical("cylinder period map produced non-finite values".into()));
        }
        if prev_change > 1e-9 {
            let ratio = change / prev_change;
            contraction = contraction.max(ratio);
            if ratio >= 1.0 {
                return Err(Error::Config(format!(
                    "period map is not contracting (measured factor {ratio:.4}); increase beta = {}",
                    op.beta
                )));
            }
        }
        prev_change = change;
        if change < tol {
            levels[0] = u;
            for (j, lv) in levels.iter().enumerate() {
                op.write_level(&mut out, j, lv, bc);
            }
            return Ok(LinearSolve { u: out, periods: period, contraction });
        }
    }
    Err(Error::NonConvergence(format!(
        "periodic cylinder solve did not converge in {max_periods} periods (last change {prev_change:.3e})"
    )))
}

/// `|G u - G v|_inf / |u - v|_inf` for two initial fields given on the cylinder
/// (only their `t = 0` interior is used).
pub fn period_map_contraction(op: &CylinderOperator, rhs: &Field3, bc: &BoundaryData, u: &Field3, v: &Field3) -> f64 {
    let (u0, v0) = (op.interior_of(u, 0), op.interior_of(v, 0));
    let (gu, gv) = (op.period_map(rhs, bc, &u0), op.period_map(rhs, bc, &v0));
    let num = gu.iter().zip(&gv).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let den = u0.iter().zip(&v0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{build_grid, sample_coefficients, Expr, MediumSpec, TorusGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn coeffs(spec: &MediumSpec) -> CoefficientSet {
        sample_coefficients(spec, &build_grid(spec).unwrap()).unwrap()
    }

    fn base(n: usize) -> TorusGrid {
        TorusGrid::new(1.0, 1.0, n, n).unwrap()
    }

    #[test]
    fn zero_data_gives_zero() {
        let c = coeffs(&MediumSpec::constant(1.0, 0.0, 8));
        let g = CylinderGrid::new(1.0, base(8)).unwrap();
        let op = CylinderOperator::new(&c, g, 2.5, 0.1, 2.0, 1.0).unwrap();
        let r = solve_linear_periodic(&op, &Field3::zeros(&g), &BoundaryData::zeros(&g), None, 1e-13, 100).unwrap();
        assert!(r.u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constants_are_reproduced() {
        for dir in [1.0, -1.0] {
            let spec = MediumSpec::heterogeneous(Expr::cos_t(1.0, 0.3), Expr::cos_x(0.2, 0.1), Expr::constant(1.0), 8);
            let c = coeffs(&spec);
            let g = CylinderGrid::new(1.0, base(8)).unwrap();
            let beta = 2.0;
            let op = CylinderOperator::new(&c, g, 2.5, 0.1, beta, dir).unwrap();
            assert!(!op.time_independent);
            let rhs = Field3::constant(&g, beta);
            let bc = BoundaryData {
                left: ScalarField::constant(&g.base, 1.0),
                right: ScalarField::constant(&g.base, 1.0),
            };
            let r = solve_linear_periodic(&op, &rhs, &bc, None, 1e-14, 200).unwrap();
            assert!(r.u.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn stationary_shortcut_matches_time_marching() {
        let c = coeffs(&MediumSpec::heterogeneous(
            Expr::cos_x(1.0, 0.3),
            Expr::constant(0.2),
            Expr::constant(1.0),
            8,
        ));
        let g = CylinderGrid::new(1.0, base(8)).unwrap();
        let op = CylinderOperator::new(&c, g, 2.5, 0.1, 2.0, 1.0).unwrap();
        assert!(op.time_independent);
        let rhs = Field3::from_fn(&g, |k, _, i| (k as f64 * 0.1).sin() + 0.1 * i as f64);
        let bc = BoundaryData { left: ScalarField::constant(&g.base, 0.2), right: ScalarField::constant(&g.base, 1.0) };
        let fast = solve_linear_periodic(&op, &rhs, &bc, None, 1e-14, 200).unwrap();
        assert_eq!(fast.periods, 0);
        let u0 = Field3::zeros(&g);
        let mut u = op.interior_of(&u0, 0);
        for _ in 0..40 {
            u = op.period_map(&rhs, &bc, &u);
        }
        let direct = op.interior_of(&fast.u, 0);
        let d = u.iter().zip(&direct).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn operator_apply_inverts_solve() {
        let spec = MediumSpec::heterogeneous(Expr::cos_t(1.0, 0.3), Expr::cos_x(0.2, 0.1), Expr::constant(1.0), 8);
        let c = coeffs(&spec);
        let g = CylinderGrid::new(1.0, base(8)).unwrap();
        let beta = 1.5;
        let op = CylinderOperator::new(&c, g, 2.0, 0.2, beta, -1.0).unwrap();
        let rhs = Field3::from_fn(&g, |k, j, i| 1.0 + (k + 2 * j + 3 * i) as f64 * 0.01);
        let bc = BoundaryData { left: ScalarField::constant(&g.base, 0.3), right: ScalarField::constant(&g.base, 0.7) };
        let r = solve_linear_periodic(&op, &rhs, &bc, None, 1e-14, 500).unwrap();
        for j in 0..g.base.nt {
            for k in 1..g.nz {
                for i in 0..g.base.nx {
                    let v = op.apply(&r.u, k, j, i) + beta * r.u.get(k, j, i);
                    assert!((v - rhs.get(k, j, i)).abs() < 1e-9, "{v} vs {}", rhs.get(k, j, i));
                }
            }
        }
    }

    #[test]
    fn contraction_is_within_bound() {
        let spec = MediumSpec::heterogeneous(Expr::cos_t(1.0, 0.3), Expr::cos_x(0.2, 0.3), Expr::constant(1.0), 16);
        let c = coeffs(&spec);
        let g = CylinderGrid::new(2.0, base(16)).unwrap();
        let beta = 2.0;
        let op = CylinderOperator::new(&c, g, 2.5, 0.1, beta, 1.0).unwrap();
        let rhs = Field3::zeros(&g);
        let bc = BoundaryData::zeros(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = Field3::from_fn(&g, |_, _, _| rng.gen::<f64>());
        let v = Field3::from_fn(&g, |_, _, _| rng.gen::<f64>());
        let factor = period_map_contraction(&op, &rhs, &bc, &u, &v);
        let dt = g.base.dt();
        assert!(factor <= (1.0 + beta * dt).powi(-(g.base.nt as i32)) + 1e-12, "{factor}");
    }

    #[test]
    fn upwind_is_chosen_for_small_eps() {
        assert_eq!(ZScheme::choose(2.5, 0.1, 1.0 / 32.0), ZScheme::Centered);
        assert_eq!(ZScheme::choose(2.5, 0.05, 1.0 / 16.0), ZScheme::Upwind);
        assert_eq!(ZScheme::choose(2.5, 0.0, 1.0 / 64.0), ZScheme::Upwind);
    }
}
