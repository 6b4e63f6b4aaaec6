//! The dispersion relation `lambda -> k_{lambda e}`, minimal speeds and
//! decay exponents.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::{principal_eigenpair_seeded, EigenPair, TwistedOperator, DEFAULT_MAX_ITERS};
use crate::medium::{CoefficientSet, ScalarField};
use crate::optimize::{bisect, golden_section};

/// Power-iteration tolerance used for dispersion evaluations.
pub const EIGEN_TOL: f64 = 1e-12;
/// Relative root residual bound.
pub const TOL_ROOT: f64 = 1e-8;
/// Target accuracy of minimal speeds.
pub const SPEED_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroOrderTag {
    Mu,
    Eta,
}

impl std::str::FromStr for ZeroOrderTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(Self::Mu),
            "eta" => Ok(Self::Eta),
            other => Err(Error::Config(format!("zero-order slot must be mu or eta, got {other}"))),
        }
    }
}

/// `k_{lambda e}` for a fixed medium, zero-order field and direction.
#[derive(Debug, Clone)]
pub struct Dispersion<'a> {
    pub coeffs: &'a CoefficientSet,
    pub zero_order: &'a ScalarField,
    pub direction: f64,
}

impl<'a> Dispersion<'a> {
    pub fn new(coeffs: &'a CoefficientSet, zero_order: &'a ScalarField, direction: f64) -> Self {
        Self { coeffs, zero_order, direction }
    }

    pub fn eigenpair(&self, lambda: f64, seed: Option<&[f64]>) -> Result<EigenPair> {
        let op = TwistedOperator::new(self.coeffs, self.zero_order, lambda, self.direction)?;
        principal_eigenpair_seeded(&op, seed, EIGEN_TOL, DEFAULT_MAX_ITERS)
    }

    pub fn k(&self, lambda: f64) -> Result<f64> {
        Ok(self.eigenpair(lambda, None)?.k)
    }

    /// `beta = |q|_inf + |a_x|_inf`, the first-order constant of the growth bounds.
    pub fn beta(&self) -> f64 {
        self.coeffs.q.sup_norm() + self.coeffs.da_dx().sup_norm()
    }

    /// Bounds `-|z|_inf - beta l - Gamma l^2 <= k <= |z|_inf + beta l - gamma l^2`.
    pub fn bounds(&self, lambda: f64) -> (f64, f64) {
        let m = self.zero_order.sup_norm();
        let b = self.beta();
        let l = lambda.abs();
        (-m - b * l - self.coeffs.gamma_cap * l * l, m + b * l - self.coeffs.gamma_ell * l * l)
    }
}

/// Sampled dispersion curve with its audits.
#[derive(Debug, Clone, Serialize)]
pub struct DispersionCurve {
    pub lambdas: Vec<f64>,
    pub ks: Vec<f64>,
    pub zero_order_tag: ZeroOrderTag,
    pub eps: f64,
    pub tol_conc: f64,
    /// Largest `0.5 (k1 + k3) - k2` over consecutive triples.
    pub concavity_violation: f64,
    pub concave: bool,
    /// Largest amount by which a sample leaves the growth bounds.
    pub bound_violation: f64,
    pub bounds_ok: bool,
}

/// Samples `k` at `n_samples` equispaced positive twists up to `lambda_max`.
pub fn scan_dispersion(
    disp: &Dispersion,
    tag: ZeroOrderTag,
    eps: f64,
    lambda_max: f64,
    n_samples: usize,
) -> Result<DispersionCurve> {
    if n_samples < 16 {
        return Err(Error::Config(format!("dispersion scan needs at least 16 samples, got {n_samples}")));
    }
    if !(lambda_max > 0.0) {
        return Err(Error::Config(format!("lambda_max must be positive, got {lambda_max}")));
    }
    let lambdas: Vec<f64> = (1..=n_samples).map(|i| lambda_max * i as f64 / n_samples as f64).collect();
    let ks = lambdas.par_iter().map(|&l| disp.k(l)).collect::<Result<Vec<f64>>>()?;
    let scale = ks.iter().fold(1.0f64, |m, k| m.max(k.abs()));
    let tol_conc = 1e-8 * scale;
    let concavity_violation = ks
        .windows(3)
        .map(|w| 0.5 * (w[0] + w[2]) - w[1])
        .fold(f64::NEG_INFINITY, f64::max);
    let bound_violation = lambdas
        .iter()
        .zip(&ks)
        .map(|(&l, &k)| {
            let (lo, hi) = disp.bounds(l);
            (lo - k).max(k - hi)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DispersionCurve {
        lambdas,
        ks,
        zero_order_tag: tag,
        eps,
        tol_conc,
        concavity_violation,
        concave: concavity_violation <= tol_conc,
        bound_violation,
        bounds_ok: bound_violation <= 1e-9 * scale,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpeedResult {
    pub c_star: f64,
    pub lambda_star: f64,
    pub eps: f64,
    pub zero_order_tag: ZeroOrderTag,
    /// `k + lambda* c* - eps lambda*^2`, zero at an exact minimum.
    pub residual: f64,
}

/// `c*_eps = min_{lambda > 0} (-k_{lambda e} + eps lambda^2) / lambda`.
pub fn minimal_speed(disp: &Dispersion, tag: ZeroOrderTag, eps: f64) -> Result<SpeedResult> {
    if !(eps >= 0.0) {
        return Err(Error::Config(format!("regularization must be >= 0, got {eps}")));
    }
    let k0 = disp.k(0.0)?;
    if k0 >= 0.0 {
        return Err(Error::Precondition(format!(
            "zero state not linearly unstable (k_0 = {k0:.6e} >= 0)"
        )));
    }
    let m = disp.zero_order.sup_norm();
    let b = disp.beta();
    let (g_lo, g_hi) = (disp.coeffs.gamma_ell, disp.coeffs.gamma_cap);
    // Upper bound on c* from the lower growth bound, then the twists beyond
    // which the objective provably exceeds it.
    let c_up = 2.0 * (m * (g_hi + eps)).sqrt() + b;
    let lam_hi = {
        let (aa, bb, cc) = (g_lo + eps, -(b + c_up), -m);
        (-bb + (bb * bb - 4.0 * aa * cc).sqrt()) / (2.0 * aa)
    };
    let lam_lo = (0.5 * (-k0) / (c_up + b)).min(0.5 * lam_hi);

    let objective = |l: f64| -> Result<f64> { Ok((-disp.k(l)? + eps * l * l) / l) };
    let n_scan = 24;
    let ratio = (lam_hi / lam_lo).powf(1.0 / (n_scan - 1) as f64);
    let grid: Vec<f64> = (0..n_scan).map(|i| lam_lo * ratio.powi(i as i32)).collect();
    let vals = grid.par_iter().map(|&l| objective(l)).collect::<Result<Vec<f64>>>()?;
    let imin = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lo = if imin == 0 { lam_lo * 1e-3 } else { grid[imin - 1] };
    let hi = if imin + 1 == n_scan { lam_hi * 4.0 } else { grid[imin + 1] };
    let best = golden_section(objective, lo, hi, 1e-9, 400)?;
    let k_star = disp.k(best.x)?;
    Ok(SpeedResult {
        c_star: best.fx,
        lambda_star: best.x,
        eps,
        zero_order_tag: tag,
        residual: k_star + best.x * best.fx - eps * best.x * best.x,
    })
}

/// The two positive roots `lam <= Lam` of `k_{lambda e} + lambda c - eps lambda^2`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RootPair {
    pub c: f64,
    pub lam: f64,
    #[serde(rename = "Lam")]
    pub big_lam: f64,
    pub residual: f64,
}

/// Decay roots for a supercritical speed.
pub fn decay_roots(disp: &Dispersion, tag: ZeroOrderTag, eps: f64, c: f64) -> Result<RootPair> {
    let speed = minimal_speed(disp, tag, eps)?;
    decay_roots_with_speed(disp, &speed, c)
}

/// As [`decay_roots`], reusing an already computed minimal speed.
pub fn decay_roots_with_speed(disp: &Dispersion, speed: &SpeedResult, c: f64) -> Result<RootPair> {
    let eps = speed.eps;
    if !(c > speed.c_star + 10.0 * SPEED_TOL) {
        return Err(Error::Domain(format!(
            "subcritical speed: c = {c} does not exceed c* = {:.9} by the required margin",
            speed.c_star
        )));
    }
    let g = |l: f64| -> Result<f64> { Ok(disp.k(l)? + l * c - eps * l * l) };
    let ls = speed.lambda_star;
    // Growth bound gives a twist where g is certainly negative.
    let m = disp.zero_order.sup_norm();
    let b = disp.beta();
    let a2 = disp.coeffs.gamma_ell + eps;
    let mut hi = ((b + c) + ((b + c).powi(2) + 4.0 * a2 * m).sqrt()) / (2.0 * a2) + 1.0;
    let mut expand = 0;
    while g(hi)? >= 0.0 {
        hi *= 2.0;
        expand += 1;
        if expand > 30 {
            return Err(Error::Numerical(format!("no upper root bracket found up to lambda = {hi}")));
        }
    }
    let xtol = 1e-14 * (1.0 + ls);
    let lam = bisect(g, 0.0, ls, xtol, 200)?;
    let big_lam = bisect(g, ls, hi, xtol, 200)?;
    let residual = g(lam)?.abs().max(g(big_lam)?.abs());
    if residual >= TOL_ROOT * (1.0 + c.abs()) {
        return Err(Error::Numerical(format!(
            "decay root residual {residual:.3e} exceeds {:.3e}",
            TOL_ROOT * (1.0 + c.abs())
        )));
    }
    Ok(RootPair { c, lam, big_lam, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{build_grid, sample_coefficients, Expr, MediumSpec};
    use proptest::prelude::*;

    fn coeffs(a: Expr, q: Expr, mu: Expr, n: usize) -> CoefficientSet {
        let spec = MediumSpec::heterogeneous(a, q, mu, n);
        sample_coefficients(&spec, &build_grid(&spec).unwrap()).unwrap()
    }

    fn constant(a: f64, q: f64, mu: f64) -> CoefficientSet {
        coeffs(Expr::constant(a), Expr::constant(q), Expr::constant(mu), 16)
    }

    #[test]
    fn constant_curves_are_closed_form() {
        for q in [0.0, 0.5] {
            let c = constant(1.0, q, 1.0);
            let d = Dispersion::new(&c, &c.mu, 1.0);
            let curve = scan_dispersion(&d, ZeroOrderTag::Mu, 0.0, 3.0, 16).unwrap();
            for (l, k) in curve.lambdas.iter().zip(&curve.ks) {
                assert!((k - (q * l - l * l - 1.0)).abs() < 1e-9);
            }
            assert!(curve.concave && curve.bounds_ok);
        }
    }

    #[test]
    fn minimal_speeds_closed_form() {
        let c = constant(1.0, 0.0, 1.0);
        let d = Dispersion::new(&c, &c.mu, 1.0);
        let s = minimal_speed(&d, ZeroOrderTag::Mu, 0.0).unwrap();
        assert!((s.c_star - 2.0).abs() < 1e-9 && (s.lambda_star - 1.0).abs() < 1e-4);
        let s = minimal_speed(&d, ZeroOrderTag::Mu, 0.25).unwrap();
        assert!((s.c_star - 2.0 * 1.25f64.sqrt()).abs() < 1e-9);

        let c = constant(1.0, 0.5, 1.0);
        for (e, expect) in [(1.0, 1.5), (-1.0, 2.5)] {
            let d = Dispersion::new(&c, &c.mu, e);
            let s = minimal_speed(&d, ZeroOrderTag::Mu, 0.0).unwrap();
            assert!((s.c_star - expect).abs() < 1e-9, "{} vs {expect}", s.c_star);
        }
    }

    #[test]
    fn stable_zero_state_is_rejected() {
        let c = constant(1.0, 0.0, -1.0);
        let d = Dispersion::new(&c, &c.mu, 1.0);
        assert!(matches!(minimal_speed(&d, ZeroOrderTag::Mu, 0.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn roots_closed_form_and_guard() {
        let c = constant(1.0, 0.0, 1.0);
        let d = Dispersion::new(&c, &c.mu, 1.0);
        let r = decay_roots(&d, ZeroOrderTag::Mu, 0.0, 2.5).unwrap();
        assert!((r.lam - 0.5).abs() < 1e-10 && (r.big_lam - 2.0).abs() < 1e-10);
        assert!(matches!(decay_roots(&d, ZeroOrderTag::Mu, 0.0, 2.0), Err(Error::Domain(_))));
        assert!(matches!(decay_roots(&d, ZeroOrderTag::Mu, 0.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn heterogeneous_speed_is_bracketed_and_stationary() {
        let c = coeffs(Expr::constant(1.0), Expr::constant(0.0), Expr::cos_x(1.0, 0.5), 32);
        let d = Dispersion::new(&c, &c.mu, 1.0);
        let s = minimal_speed(&d, ZeroOrderTag::Mu, 0.0).unwrap();
        assert!(s.c_star > 2.0 * 0.5f64.sqrt() && s.c_star < 2.0 * 1.5f64.sqrt());
        let obj = |l: f64| -d.k(l).unwrap() / l;
        let h = 1e-3;
        let deriv = (obj(s.lambda_star + h) - obj(s.lambda_star - h)) / (2.0 * h);
        assert!(deriv.abs() < 1e-4, "{deriv}");
        assert!(s.residual.abs() < 1e-8);
    }

    #[test]
    fn flip_symmetry() {
        let c = coeffs(Expr::cos_x(1.0, 0.2), Expr::cos_x(0.3, 0.2), Expr::cos_x(1.0, 0.5), 16);
        let mut cm = c.clone();
        cm.q = c.q.map(|v| -v);
        let s1 = minimal_speed(&Dispersion::new(&c, &c.mu, 1.0), ZeroOrderTag::Mu, 0.0).unwrap();
        let s2 = minimal_speed(&Dispersion::new(&cm, &cm.mu, -1.0), ZeroOrderTag::Mu, 0.0).unwrap();
        // Even coefficients: reflecting x maps (e, q) to (-e, -q).
        assert!((s1.c_star - s2.c_star).abs() < 1e-10, "{} vs {}", s1.c_star, s2.c_star);
    }

    #[test]
    fn eps_continuity_of_roots() {
        let c = constant(1.0, 0.0, 1.0);
        let d = Dispersion::new(&c, &c.mu, 1.0);
        let mut prev_gap = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05, 0.025] {
            let r = decay_roots(&d, ZeroOrderTag::Mu, eps, 2.5).unwrap();
            let gap = (r.lam - 0.5).abs().max((r.big_lam - 2.0).abs());
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn constant_speed_formula(a in 0.3f64..2.0, q in -0.8f64..0.8, mu in 0.2f64..2.0, eps in 0.0f64..0.5) {
            let c = constant(a, q, mu);
            let d = Dispersion::new(&c, &c.mu, 1.0);
            let s = minimal_speed(&d, ZeroOrderTag::Mu, eps).unwrap();
            let exact = 2.0 * ((a + eps) * mu).sqrt() - q;
            prop_assert!((s.c_star - exact).abs() < 1e-8 * (1.0 + exact.abs()));
        }
    }
}
