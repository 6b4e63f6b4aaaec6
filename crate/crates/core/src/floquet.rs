//! Periodic principal eigenpairs of the twisted operator via the period map.
//!
//! The twisted equation is `v_t = -M(t) v + Z(t) v` with the transport part
//! `M v = -(a v_x)_x + (q - 2 lambda e a) v_x` and the zero-order part
//! `Z = lambda^2 a + lambda e a_x + zero_order - lambda e q`.
//! One time step applies `exp(dt/2 Z_j)`, a Crank-Nicolson (or implicit
//! Euler) step for `M`, then `exp(dt/2 Z_{j+1})`. `M` annihilates constants,
//! so the scheme is exact for constant coefficients.

use crate::error::{Error, Result};
use crate::linalg::{CyclicFactor, Tridiagonal};
use crate::medium::{CoefficientSet, ScalarField, TorusGrid};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// `L_lambda` for one twist `lambda` in direction `e`.
#[derive(Debug, Clone)]
pub struct TwistedOperator {
    pub lambda: f64,
    pub direction: f64,
    pub coeffs: CoefficientSet,
    pub zero_order: ScalarField,
    pub grid: TorusGrid,
}

impl TwistedOperator {
    pub fn new(coeffs: &CoefficientSet, zero_order: &ScalarField, lambda: f64, direction: f64) -> Result<Self> {
        if !zero_order.is_finite() {
            return Err(Error::Numerical("zero-order field is not finite".into()));
        }
        if zero_order.nt != coeffs.grid.nt || zero_order.nx != coeffs.grid.nx {
            return Err(Error::Config("zero-order field does not match the grid".into()));
        }
        if !lambda.is_finite() {
            return Err(Error::Numerical(format!("twist {lambda} is not finite")));
        }
        Ok(Self {
            lambda,
            direction,
            coeffs: coeffs.clone(),
            zero_order: zero_order.clone(),
            grid: coeffs.grid,
        })
    }

    /// The product `lambda * e`; the only way the twist enters.
    pub fn twist(&self) -> f64 {
        self.lambda * self.direction
    }

    /// Zero-order coefficient `Z` on the whole torus.
    pub fn zero_order_total(&self) -> ScalarField {
        let le = self.twist();
        let c = &self.coeffs;
        let da = c.da_dx();
        let mut z = self.zero_order.clone();
        for (k, v) in z.values.iter_mut().enumerate() {
            *v += le * le * c.a.values[k] + le * da.values[k] - le * c.q.values[k];
        }
        z
    }

    /// Transport matrix `M_j` in cyclic tridiagonal storage.
    pub fn transport(&self, j: usize) -> Tridiagonal {
        let le = self.twist();
        let g = &self.grid;
        let (nx, h) = (g.nx, g.dx());
        let a = self.coeffs.a.row(j);
        let q = self.coeffs.q.row(j);
        let mut m = Tridiagonal::zeros(nx);
        for i in 0..nx {
            let ip = if i + 1 == nx { 0 } else { i + 1 };
            let im = if i == 0 { nx - 1 } else { i - 1 };
            let a_plus = 0.5 * (a[i] + a[ip]);
            let a_minus = 0.5 * (a[i] + a[im]);
            let b = q[i] - 2.0 * le * a[i];
            m.lower[i] = -a_minus / (h * h) - b / (2.0 * h);
            m.diag[i] = (a_plus + a_minus) / (h * h);
            m.upper[i] = -a_plus / (h * h) + b / (2.0 * h);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepScheme {
    CrankNicolson,
    ImplicitEuler,
}

/// Precomputed one-period propagator of the twisted equation.
///
/// Values are shifted by `exp(-shift t)` to keep iterates in range; the
/// shift is removed again when eigenvalues are reported.
#[derive(Debug, Clone)]
pub struct PeriodMap {
    pub grid: TorusGrid,
    pub scheme: StepScheme,
    pub shift: f64,
    half_exp: Vec<Vec<f64>>,
    explicit: Vec<Tridiagonal>,
    factors: Vec<CyclicFactor>,
    factor_of_level: Vec<usize>,
}

impl PeriodMap {
    pub fn new(op: &TwistedOperator) -> Result<Self> {
        let g = op.grid;
        let dt = g.dt();
        let z = op.zero_order_total();
        let shift = z.mean();
        let half_exp: Vec<Vec<f64>> = (0..g.nt)
            .map(|j| z.row(j).iter().map(|&zv| (0.5 * dt * (zv - shift)).exp()).collect())
            .collect();
        let transports: Vec<Tridiagonal> = (0..g.nt).map(|j| op.transport(j)).collect();
        let cn_ok = transports.iter().all(|m| {
            (0..g.nx).all(|i| 1.0 - 0.5 * dt * m.diag[i] >= 0.0 && m.lower[i] <= 0.0 && m.upper[i] <= 0.0)
        });
        let (scheme, theta) = if cn_ok {
            (StepScheme::CrankNicolson, 0.5)
        } else {
            (StepScheme::ImplicitEuler, 1.0)
        };
        let explicit = if cn_ok {
            transports
                .iter()
                .map(|m| Tridiagonal {
                    lower: m.lower.iter().map(|v| -0.5 * dt * v).collect(),
                    diag: m.diag.iter().map(|v| 1.0 - 0.5 * dt * v).collect(),
                    upper: m.upper.iter().map(|v| -0.5 * dt * v).collect(),
                })
                .collect()
        } else {
            Vec::new()
        };
        let mut factors = Vec::new();
        let mut factor_of_level = Vec::with_capacity(g.nt);
        let mut reps: Vec<usize> = Vec::new();
        for (l, m) in transports.iter().enumerate() {
            if let Some(pos) = reps.iter().position(|&r| transports[r] == *m) {
                factor_of_level.push(pos);
                continue;
            }
            let implicit = Tridiagonal {
                lower: m.lower.iter().map(|v| theta * dt * v).collect(),
                diag: m.diag.iter().map(|v| 1.0 + theta * dt * v).collect(),
                upper: m.upper.iter().map(|v| theta * dt * v).collect(),
            };
            factors.push(CyclicFactor::new(&implicit).map_err(|e| {
                Error::Numerical(format!("period map step at t-level {l}, twist {}: {e}", op.twist()))
            })?);
            reps.push(l);
            factor_of_level.push(factors.len() - 1);
        }
        Ok(Self { grid: g, scheme, shift, half_exp, explicit, factors, factor_of_level })
    }

    /// Advances `v` from level `j` to level `j + 1` (shifted).
    pub fn step(&self, j: usize, v: &mut [f64], scratch: &mut [f64]) {
        let nt = self.grid.nt;
        let jn = (j + 1) % nt;
        for (x, e) in v.iter_mut().zip(&self.half_exp[j]) {
            *x *= e;
        }
        if self.scheme == StepScheme::CrankNicolson {
            self.explicit[j].mul_cyclic(v, scratch);
            v.copy_from_slice(scratch);
        }
        self.factors[self.factor_of_level[jn]].solve_in_place(v);
        for (x, e) in v.iter_mut().zip(&self.half_exp[jn]) {
            *x *= e;
        }
    }

    /// Shifted period map applied in place.
    pub fn apply_shifted(&self, v: &mut [f64]) {
        let mut scratch = vec![0.0; v.len()];
        for j in 0..self.grid.nt {
            self.step(j, v, &mut scratch);
        }
    }
}

/// `v(T)` for the twisted equation started from `v0` at `t = 0`.
pub fn apply_period_map(op: &TwistedOperator, v0: &[f64]) -> Result<Vec<f64>> {
    if v0.len() != op.grid.nx {
        return Err(Error::Config(format!("initial slice has {} nodes, grid has {}", v0.len(), op.grid.nx)));
    }
    if v0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("initial slice is not finite".into()));
    }
    let map = PeriodMap::new(op)?;
    let mut v = v0.to_vec();
    map.apply_shifted(&mut v);
    let growth = (map.shift * op.grid.t_period).exp();
    v.iter_mut().for_each(|x| *x *= growth);
    Ok(v)
}

/// Outcome of a positive power iteration.
#[derive(Debug, Clone)]
pub struct PowerResult {
    /// Perron root estimate.
    pub rho: f64,
    /// Sup-normalized positive eigenvector.
    pub vector: Vec<f64>,
    pub iters: usize,
    /// Final relative Collatz-Wielandt gap.
    pub gap: f64,
}

/// Power iteration for a positive linear map using Collatz-Wielandt bounds.
///
/// Converges when both the relative gap between the min and max component
/// ratios and the sup-norm change of the normalized iterate drop below `tol`.
pub fn power_iteration<F>(n: usize, seed: Option<&[f64]>, tol: f64, max_iters: usize, mut apply: F) -> Result<PowerResult>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    if !(tol > 0.0) {
        return Err(Error::Config(format!("power iteration tolerance must be positive, got {tol}")));
    }
    let mut v = match seed {
        Some(s) if s.len() == n && s.iter().all(|&x| x > 0.0 && x.is_finite()) => s.to_vec(),
        _ => vec![1.0; n],
    };
    let vmax = v.iter().copied().fold(0.0, f64::max);
    v.iter_mut().for_each(|x| *x /= vmax);
    let mut w = vec![0.0; n];
    let mut gap = f64::INFINITY;
    for iter in 1..=max_iters {
        apply(&v, &mut w)?;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        let mut wmin = f64::INFINITY;
        let mut wmax = 0.0f64;
        for (a, b) in w.iter().zip(&v) {
            if !a.is_finite() {
                return Err(Error::Numerical(format!("power iterate not finite at iteration {iter}")));
            }
            wmin = wmin.min(*a);
            wmax = wmax.max(*a);
            let r = a / b;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if !(wmin > 0.0) {
            return Err(Error::Positivity { min_value: wmin });
        }
        gap = (hi - lo) / hi;
        let mut change: f64 = 0.0;
        for (a, b) in w.iter_mut().zip(v.iter()) {
            *a /= wmax;
            change = change.max((*a - b).abs());
        }
        std::mem::swap(&mut v, &mut w);
        if gap < tol && change < tol {
            return Ok(PowerResult { rho: wmax, vector: v, iters: iter, gap });
        }
    }
    Err(Error::Iteration { iters: max_iters, gap })
}

/// Principal eigenpair `(k, psi)` with `psi > 0` and `max psi = 1`.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub k: f64,
    pub psi: ScalarField,
    /// Largest deviation of the per-step growth exponent of `psi` from `k`.
    pub residual: f64,
    pub iters: usize,
}

pub fn principal_eigenpair(op: &TwistedOperator, tol: f64, max_iters: usize) -> Result<EigenPair> {
    principal_eigenpair_seeded(op, None, tol, max_iters)
}

/// As [`principal_eigenpair`], warm-started from an initial slice.
pub fn principal_eigenpair_seeded(
    op: &TwistedOperator,
    seed: Option<&[f64]>,
    tol: f64,
    max_iters: usize,
) -> Result<EigenPair> {
    let map = PeriodMap::new(op)?;
    let g = op.grid;
    let pw = power_iteration(g.nx, seed, tol, max_iters, |v, w| {
        w.copy_from_slice(v);
        map.apply_shifted(w);
        Ok(())
    })?;
    let k = -pw.rho.ln() / g.t_period - map.shift;

    // Extend to all time levels: psi^{j+1} = exp((k + shift) dt) S_j psi^j.
    let dt = g.dt();
    let growth = ((k + map.shift) * dt).exp();
    let mut psi = ScalarField::constant(&g, 0.0);
    let mut v = pw.vector.clone();
    let mut scratch = vec![0.0; g.nx];
    psi.row_mut(0).copy_from_slice(&v);
    for j in 0..g.nt - 1 {
        map.step(j, &mut v, &mut scratch);
        v.iter_mut().for_each(|x| *x *= growth);
        psi.row_mut(j + 1).copy_from_slice(&v);
    }
    let pmax = psi.max();
    psi.values.iter_mut().for_each(|x| *x /= pmax);
    if !(psi.min() > 0.0) {
        return Err(Error::Positivity { min_value: psi.min() });
    }
    let (lo, hi) = step_exponent_bounds(&map, &psi)?;
    let residual = (hi - k).abs().max((k - lo).abs());
    Ok(EigenPair { k, psi, residual, iters: pw.iters })
}

/// `lambda_1' = k_0` with the linearized growth as zero-order term.
pub fn generalized_eigenvalue(coeffs: &CoefficientSet) -> Result<f64> {
    let op = TwistedOperator::new(coeffs, &coeffs.mu, 0.0, 1.0)?;
    Ok(principal_eigenpair(&op, DEFAULT_TOL, DEFAULT_MAX_ITERS)?.k)
}

/// Min and max over nodes of the discrete `(L phi) / phi`.
///
/// The discrete quotient at `(j+1, i)` is the growth exponent
/// `-ln((S_j phi^j)_i / phi^{j+1}_i) / dt` of one scheme step `S_j`; since
/// each step is a positive map, the bounds enclose the discrete `k` exactly.
pub fn rayleigh_sandwich(op: &TwistedOperator, phi: &ScalarField) -> Result<(f64, f64)> {
    if let Some((idx, v)) = phi.values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::Domain(format!(
            "test function must be positive, found {v} at node (t={}, x={})",
            idx / phi.nx,
            idx % phi.nx
        )));
    }
    let map = PeriodMap::new(op)?;
    step_exponent_bounds(&map, phi)
}

fn step_exponent_bounds(map: &PeriodMap, phi: &ScalarField) -> Result<(f64, f64)> {
    let g = map.grid;
    let dt = g.dt();
    let mut scratch = vec![0.0; g.nx];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for j in 0..g.nt {
        let mut w = phi.row(j).to_vec();
        map.step(j, &mut w, &mut scratch);
        for (wi, pi) in w.iter().zip(phi.row((j + 1) % g.nt)) {
            let r = -(wi / pi).ln() / dt - map.shift;
            if !r.is_finite() {
                return Err(Error::Positivity { min_value: *wi });
            }
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{build_grid, sample_coefficients, Expr, MediumSpec};

    fn coeffs(spec: &MediumSpec) -> CoefficientSet {
        sample_coefficients(spec, &build_grid(spec).unwrap()).unwrap()
    }

    fn constant(a: f64, q: f64, mu: f64, n: usize) -> CoefficientSet {
        coeffs(&MediumSpec::heterogeneous(Expr::constant(a), Expr::constant(q), Expr::constant(mu), n))
    }

    #[test]
    fn period_map_constant_growth() {
        let c = constant(1.0, 0.0, 1.0, 16);
        for (lam, rate) in [(0.0, 1.0), (1.0, 2.0)] {
            let op = TwistedOperator::new(&c, &c.mu, lam, 1.0).unwrap();
            let out = apply_period_map(&op, &[1.0; 16]).unwrap();
            for v in out {
                assert!((v - f64::exp(rate)).abs() < 1e-12 * v);
            }
        }
    }

    #[test]
    fn closed_form_eigenvalues() {
        for (a, q, mu) in [(1.0, 0.0, 1.0), (1.0, 0.5, 1.0), (0.7, -0.3, 2.0)] {
            let c = constant(a, q, mu, 16);
            for e in [1.0, -1.0] {
                for lam in [0.0, 0.5, -0.5, 1.0, -1.0, 2.0] {
                    let op = TwistedOperator::new(&c, &c.mu, lam, e).unwrap();
                    let ep = principal_eigenpair(&op, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
                    let exact = q * e * lam - a * lam * lam - mu;
                    assert!((ep.k - exact).abs() <= 1e-9 * (1.0 + exact.abs()), "{} vs {exact}", ep.k);
                    assert_eq!(ep.psi.max(), 1.0);
                }
            }
        }
    }

    #[test]
    fn direction_flip_is_exact() {
        let spec = MediumSpec::heterogeneous(Expr::cos_x(1.0, 0.3), Expr::cos_t(0.2, 0.4), Expr::cos_x(1.0, 0.5), 16);
        let c = coeffs(&spec);
        let k1 = principal_eigenpair(&TwistedOperator::new(&c, &c.mu, 0.8, 1.0).unwrap(), 1e-12, 1000).unwrap().k;
        let k2 = principal_eigenpair(&TwistedOperator::new(&c, &c.mu, -0.8, -1.0).unwrap(), 1e-12, 1000).unwrap().k;
        assert_eq!(k1, k2);
    }

    #[test]
    fn sandwich_of_eigenfunction_is_tight() {
        let spec = MediumSpec::heterogeneous(Expr::cos_x(1.0, 0.3), Expr::constant(0.2), Expr::cos_x(1.0, 0.5), 16);
        let c = coeffs(&spec);
        let op = TwistedOperator::new(&c, &c.mu, 0.7, 1.0).unwrap();
        let ep = principal_eigenpair(&op, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        let (lo, hi) = rayleigh_sandwich(&op, &ep.psi).unwrap();
        assert!(lo <= ep.k + 1e-9 && ep.k <= hi + 1e-9);
        assert!(hi - lo <= 10.0 * ep.residual.max(1e-12));
    }

    #[test]
    fn sandwich_rejects_nonpositive() {
        let c = constant(1.0, 0.0, 1.0, 8);
        let op = TwistedOperator::new(&c, &c.mu, 0.0, 1.0).unwrap();
        let mut phi = ScalarField::constant(&c.grid, 1.0);
        phi.values[3] = 0.0;
        assert!(matches!(rayleigh_sandwich(&op, &phi), Err(Error::Domain(_))));
    }

    #[test]
    fn constant_test_function_gives_exact_k() {
        let c = constant(1.0, 0.5, 1.0, 16);
        let op = TwistedOperator::new(&c, &c.mu, 1.0, 1.0).unwrap();
        let (lo, hi) = rayleigh_sandwich(&op, &ScalarField::constant(&c.grid, 1.0)).unwrap();
        assert!((lo + 1.5).abs() < 1e-12 && (hi + 1.5).abs() < 1e-12);
    }

    #[test]
    fn generalized_eigenvalue_signs() {
        assert!((generalized_eigenvalue(&constant(1.0, 0.0, 1.0, 16)).unwrap() + 1.0).abs() < 1e-12);
        assert!((generalized_eigenvalue(&constant(1.0, 0.0, -1.0, 16)).unwrap() - 1.0).abs() < 1e-12);
        let c = coeffs(&MediumSpec::heterogeneous(
            Expr::constant(1.0),
            Expr::constant(0.0),
            Expr::cos_x(0.5, 1.0),
            32,
        ));
        let v = generalized_eigenvalue(&c).unwrap();
        assert!((-1.5..=0.5).contains(&v), "{v}");
    }

    #[test]
    fn power_iteration_reports_nonconvergence() {
        // A rotation-like positive map with two dominant eigenvalues of equal modulus.
        let res = power_iteration(2, Some(&[1.0, 0.5]), 1e-12, 20, |v, w| {
            w[0] = v[1];
            w[1] = v[0];
            Ok(())
        });
        assert!(matches!(res, Err(Error::Iteration { iters: 20, .. })));
    }
}
