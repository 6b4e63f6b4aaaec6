//! Monotone iteration on the cylinder, domain continuation and the
//! regularization sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::barriers::{barrier_residuals, Subsolution, Supersolution};
use super::diagnostics::{pinned_window, window_l1, window_variation};
use super::{
    build_subsolution, build_supersolution, cylinder_eigenpair, cylinder_roots, solve_linear_periodic, BoundaryData,
    CylinderGrid, CylinderOperator, Field3, FrontProfile, SubSuper,
};
use crate::equilibrium::{implicit_fixed_point, DEFAULT_MAX_PERIODS};
use crate::error::{Error, Result};
use crate::medium::{evaluate_eta, CoefficientSet, Medium, Nonlinearity, ScalarField};
use crate::optimize::bisect;

/// Which barriers drive the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontPath {
    /// `f(u) <= mu u`: barriers from the `mu` eigenpair, no translation.
    Kpp,
    /// Supersolution from the `eta` eigenpair, translated barriers.
    General,
}

impl std::str::FromStr for FrontPath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kpp" => Ok(Self::Kpp),
            "general" => Ok(Self::General),
            other => Err(Error::Config(format!("front path must be kpp or general, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FrontOptions {
    /// Outer stopping tolerance on `sup |phi_{n+1} - phi_n|`.
    pub tol: f64,
    pub max_outer: usize,
    /// Fixed-point tolerance of each periodic linear solve.
    pub inner_tol: f64,
    pub max_periods: usize,
    /// Overrides the automatic shift.
    pub beta: Option<f64>,
}

impl Default for FrontOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_outer: 20_000, inner_tol: 1e-13, max_periods: 5_000, beta: None }
    }
}

/// Medium data shared by all front computations.
#[derive(Debug, Clone)]
pub struct FrontContext {
    pub coeffs: CoefficientSet,
    pub nl: Nonlinearity,
    /// Periodic state of the fully implicit scheme used on the cylinder.
    pub p: ScalarField,
    pub eta: ScalarField,
    pub direction: f64,
}

impl FrontContext {
    pub fn new(coeffs: CoefficientSet, nl: Nonlinearity, direction: f64) -> Result<Self> {
        let g = coeffs.grid;
        let start = ScalarField::constant(&g, nl.saturation());
        let p = implicit_fixed_point(&coeffs, &nl, &start, 1e-13, DEFAULT_MAX_PERIODS)?.p;
        let eta = evaluate_eta(&nl, &p, &g, 256)?;
        Ok(Self { coeffs, nl, p, eta, direction })
    }

    pub fn from_medium(m: &Medium) -> Result<Self> {
        Self::new(m.coeffs.clone(), m.nl.clone(), m.direction)
    }

    /// `|q_x|/2 + Lip(f on [0, max p]) + 1`.
    pub fn beta(&self) -> f64 {
        let qx = self.coeffs.q.dx_centered(self.coeffs.grid.dx()).sup_norm();
        0.5 * qx + self.nl.lipschitz(self.p.max()) + 1.0
    }

    pub fn zero_order(&self, path: FrontPath) -> &ScalarField {
        match path {
            FrontPath::Kpp => &self.coeffs.mu,
            FrontPath::General => &self.eta,
        }
    }
}

struct Outer {
    phi: Field3,
    iters: usize,
    outer_defect: f64,
    sandwich_defect: f64,
    contraction: f64,
}

/// `phi_0 = zeta`, `(L + beta) phi_{n+1} = f(phi_n) + beta phi_n`.
fn run_outer(
    ctx: &FrontContext,
    op: &CylinderOperator,
    bar: &SubSuper,
    bc: &BoundaryData,
    opts: &FrontOptions,
) -> Result<Outer> {
    let g = op.grid;
    let (nt, nx) = (g.base.nt, g.base.nx);
    let mut phi = bar.zeta.clone();
    let mut rhs = Field3::zeros(&g);
    let mut out = Outer { phi: Field3::zeros(&g), iters: 0, outer_defect: 0.0, sandwich_defect: 0.0, contraction: 0.0 };
    for n in 1..=opts.max_outer {
        for j in 0..nt {
            for k in 0..=g.nz {
                for i in 0..nx {
                    let idx = phi.index(j, k, i);
                    let v = phi.values[idx];
                    rhs.values[idx] = ctx.nl.eval(j, i, v) + op.beta * v;
                }
            }
        }
        let sol = solve_linear_periodic(op, &rhs, bc, Some(&phi), opts.inner_tol, opts.max_periods)?;
        out.contraction = out.contraction.max(sol.contraction);
        out.outer_defect = out.outer_defect.max(sol.u.max_excess(&phi));
        out.sandwich_defect = out
            .sandwich_defect
            .max(bar.theta.max_excess(&sol.u))
            .max(sol.u.max_excess(&bar.zeta));
        let change = sol.u.max_abs_diff(&phi);
        if !change.is_finite() {
            return Err(Error::Numerical(format!("outer iterate not finite at step {n}")));
        }
        phi = sol.u;
        if change < opts.tol {
            out.phi = phi;
            out.iters = n;
            return Ok(out);
        }
    }
    Err(Error::NonConvergence(format!(
        "monotone iteration did not converge in {} outer steps",
        opts.max_outer
    )))
}

fn barrier_pair(
    ctx: &FrontContext,
    op: &CylinderOperator,
    sub: Subsolution,
    sup: Supersolution,
    shift_sub: f64,
    shift_super: f64,
) -> SubSuper {
    let theta = sub.field(&op.grid, shift_sub);
    let zeta = sup.field(&op.grid, &ctx.p, shift_super);
    let (sub_residual, super_residual) = barrier_residuals(op, &ctx.nl, &theta, &zeta);
    SubSuper { theta, zeta, sub, sup, shift_sub, shift_super, sub_residual, super_residual }
}

fn boundary_of(bar: &SubSuper, grid: &CylinderGrid) -> BoundaryData {
    BoundaryData { left: bar.theta.plane(0, &grid.base), right: bar.zeta.plane(grid.nz, &grid.base) }
}

/// Mean of `phi` over `z in [0, 1]` and the torus.
fn unit_slab_mean(phi: &Field3, grid: &CylinderGrid) -> f64 {
    let (mut s, mut n) = (0.0, 0);
    for k in grid.center()..=grid.nz {
        if grid.z_at(k) > 1.0 + 1e-12 {
            break;
        }
        s += phi.plane_mean(k);
        n += 1;
    }
    s / n as f64
}

/// Finite-cylinder front at speed `c` and regularization `eps`.
///
/// Boundary data are `theta` at `z = -a` and `zeta` at `z = a`. The outer
/// sequence decreases from `zeta`, stays above `theta`, and converges to a
/// z-nondecreasing solution; every property is measured and reported.
pub fn monotone_iteration(
    ctx: &FrontContext,
    c: f64,
    eps: f64,
    a: f64,
    path: FrontPath,
    opts: &FrontOptions,
) -> Result<FrontProfile> {
    if !(opts.tol > 0.0) {
        return Err(Error::Config(format!("outer tolerance must be positive, got {}", opts.tol)));
    }
    let co = &ctx.coeffs;
    let dir = ctx.direction;
    let grid = CylinderGrid::new(a, co.grid)?;
    let beta = opts.beta.unwrap_or_else(|| ctx.beta());
    if path == FrontPath::Kpp && !ctx.nl.kpp_flag {
        return Err(Error::Precondition("the KPP path needs f(t, x, u) <= mu u; use the general path".into()));
    }
    let roots = cylinder_roots(co, &co.mu, &grid, c, eps, dir)?;
    let eig = cylinder_eigenpair(co, &co.mu, &grid, c, eps, dir, roots.lam)?;
    let sub = build_subsolution(co, &co.mu, &ctx.nl, &grid, c, eps, dir, &roots, &eig, &ctx.p)?;
    let op = CylinderOperator::new(co, grid, c, eps, beta, dir)?;

    let (bar, outer, tau) = match path {
        FrontPath::Kpp => {
            let a0 = -sub.z_peak;
            if grid.a <= a0 {
                return Err(Error::Precondition(format!(
                    "half-length a = {} must exceed the subsolution peak distance {a0:.4}",
                    grid.a
                )));
            }
            let bar = barrier_pair(ctx, &op, sub, build_supersolution(&eig), 0.0, 0.0);
            let bc = boundary_of(&bar, &grid);
            let outer = run_outer(ctx, &op, &bar, &bc, opts)?;
            (bar, outer, 0.0)
        }
        FrontPath::General => {
            let roots_eta = cylinder_roots(co, &ctx.eta, &grid, c, eps, dir)?;
            let eig_eta = cylinder_eigenpair(co, &ctx.eta, &grid, c, eps, dir, roots_eta.lam)?;
            let sup = build_supersolution(&eig_eta);
            general_path(ctx, &op, sub, sup, roots.lam, opts)?
        }
    };
    let monotone_defect = outer.phi.z_monotone_defect().max(0.0);
    if monotone_defect > 100.0 * opts.tol {
        return Err(Error::Scheme(format!(
            "profile not monotone in z (defect {monotone_defect:.3e}); refine the grid"
        )));
    }
    let sandwich_defect = outer.sandwich_defect.max(0.0);
    if sandwich_defect > 100.0 * opts.tol {
        return Err(Error::Scheme(format!("iterate left the barrier sandwich (defect {sandwich_defect:.3e})")));
    }
    Ok(FrontProfile {
        grid,
        phi: outer.phi,
        p: ctx.p.clone(),
        c,
        eps,
        path,
        barriers: bar,
        roots,
        iters: outer.iters,
        outer_defect: outer.outer_defect.max(0.0),
        monotone_defect,
        sandwich_defect,
        beta,
        z_scheme: op.z_scheme,
        tau,
        measured_contraction: outer.contraction,
    })
}

/// Translated barriers `theta(z + m_a(tau))`, `zeta(z + tau)` with `tau`
/// chosen so that the mean over `z in [0, 1]` is half the peak of `min theta`.
fn general_path(
    ctx: &FrontContext,
    op: &CylinderOperator,
    sub: Subsolution,
    sup: Supersolution,
    lam_mu: f64,
    opts: &FrontOptions,
) -> Result<(SubSuper, Outer, f64)> {
    let grid = op.grid;
    let a = grid.a;
    let lam_eta = sup.lam;
    let kappa = (sup.psi.min().ln() / lam_mu).min(0.0);
    let target = 0.5 * sub.theta_minus;
    let solve_at = |tau: f64| -> Result<(SubSuper, Outer)> {
        let mut m = (lam_eta / lam_mu * (tau - a) + a + kappa).min(0.0);
        let zeta = sup.field(&grid, &ctx.p, tau);
        let mut ordered = false;
        for _ in 0..=4 * grid.nz {
            if sub.field(&grid, sub.z_peak + m).max_excess(&zeta) <= 0.0 {
                ordered = true;
                break;
            }
            m -= grid.dz;
        }
        if !ordered {
            return Err(Error::Scheme("translated barriers could not be ordered on the cylinder".into()));
        }
        let bar = barrier_pair(ctx, op, sub.clone(), sup.clone(), sub.z_peak + m, tau);
        let bc = boundary_of(&bar, &grid);
        let outer = run_outer(ctx, op, &bar, &bc, opts)?;
        Ok((bar, outer))
    };
    let offset = |tau: f64| -> Result<f64> { Ok(unit_slab_mean(&solve_at(tau)?.1.phi, &grid) - target) };
    let (lo, hi) = (-a, a);
    let tau = if offset(lo)? >= 0.0 {
        lo
    } else if offset(hi)? <= 0.0 {
        hi
    } else {
        bisect(offset, lo, hi, 0.25 * grid.dz, 200)?
    };
    let (bar, outer) = solve_at(tau)?;
    Ok((bar, outer, tau))
}

/// Domain doubling until the pinned profile stabilizes on a fixed window.
#[derive(Debug, Clone)]
pub struct ContinuationReport {
    pub profile: FrontProfile,
    pub a_values: Vec<f64>,
    /// Sup change of the pinned window between consecutive half-lengths.
    pub window_changes: Vec<f64>,
    pub window_half_width: f64,
}

/// Doubles `a` (at most 4 times) until the pinned profile on
/// `[-a0/2, a0/2]` changes by less than `tol_a`.
pub fn continue_domain(
    ctx: &FrontContext,
    c: f64,
    eps: f64,
    a0: f64,
    path: FrontPath,
    tol_a: f64,
    opts: &FrontOptions,
) -> Result<ContinuationReport> {
    let half = 0.5 * a0;
    let mut profile = monotone_iteration(ctx, c, eps, a0, path, opts)?;
    let mut window = pinned_window(&profile, half)?;
    let mut a_values = vec![profile.grid.a];
    let mut window_changes = Vec::new();
    for _ in 0..4 {
        let a = 2.0 * profile.grid.a;
        let next = monotone_iteration(ctx, c, eps, a, path, opts)?;
        let next_window = pinned_window(&next, half)?;
        let change = next_window
            .values
            .iter()
            .zip(&window.values)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        a_values.push(next.grid.a);
        window_changes.push(change);
        profile = next;
        window = next_window;
        if change < tol_a {
            return Ok(ContinuationReport { profile, a_values, window_changes, window_half_width: half });
        }
    }
    Err(Error::NonConvergence(format!(
        "pinned profile did not stabilize after 4 doublings (window changes {window_changes:?})"
    )))
}

/// Profiles along a decreasing regularization sequence.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub eps: Vec<f64>,
    /// Windowed L1 distance between consecutive pinned profiles.
    pub distances: Vec<f64>,
    pub decreasing: bool,
    /// Mean over the torus of `sum |phi(z + dz) - phi(z)|` on the window.
    pub variation: Vec<f64>,
    /// `mean p (1 + tol)`.
    pub variation_bound: f64,
    pub variation_ok: bool,
    /// `max dphi/dz` over the cylinder.
    pub max_slope: Vec<f64>,
    /// `1.1 Lam max p` with the fitted `Lam` at each `eps`.
    pub slope_bound: Vec<f64>,
    pub slope_ok: bool,
    pub window_half_width: f64,
    pub profiles: Vec<FrontProfile>,
}

/// Computes profiles for each `eps` (independent runs in parallel) and the
/// Cauchy, variation and slope checks on the window `[-a/2, a/2]`.
pub fn eps_sweep(
    ctx: &FrontContext,
    c: f64,
    eps_list: &[f64],
    a: f64,
    path: FrontPath,
    opts: &FrontOptions,
) -> Result<SweepReport> {
    if eps_list.len() < 2 {
        return Err(Error::Config("regularization sweep needs at least two values".into()));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) || eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Config(format!("regularization values must be positive and decreasing, got {eps_list:?}")));
    }
    let profiles = eps_list
        .par_iter()
        .map(|&eps| monotone_iteration(ctx, c, eps, a, path, opts))
        .collect::<Result<Vec<_>>>()?;
    let half = 0.5 * a;
    let windows = profiles.iter().map(|p| pinned_window(p, half)).collect::<Result<Vec<_>>>()?;
    let distances: Vec<f64> = windows.windows(2).map(|w| window_l1(&w[0], &w[1])).collect();
    let decreasing = distances.windows(2).all(|d| d[1] < d[0]);
    let variation: Vec<f64> = windows.iter().map(window_variation).collect();
    let variation_bound = ctx.p.mean() * (1.0 + opts.tol);
    let variation_ok = variation.iter().all(|&v| v <= variation_bound);
    let pmax = ctx.p.max();
    let max_slope: Vec<f64> = profiles.iter().map(max_z_slope).collect();
    let slope_bound: Vec<f64> = profiles.iter().map(|p| 1.1 * p.roots.big_lam * pmax).collect();
    let slope_ok = max_slope.iter().zip(&slope_bound).all(|(s, b)| s <= b);
    Ok(SweepReport {
        eps: eps_list.to_vec(),
        distances,
        decreasing,
        variation,
        variation_bound,
        variation_ok,
        max_slope,
        slope_bound,
        slope_ok,
        window_half_width: half,
        profiles,
    })
}

/// `max (phi(z + dz) - phi(z)) / dz` over the cylinder.
pub(crate) fn max_z_slope(profile: &FrontProfile) -> f64 {
    let f = &profile.phi;
    let mut m = f64::NEG_INFINITY;
    for j in 0..f.nt {
        for k in 0..f.nz {
            for i in 0..f.nx {
                m = m.max(f.get(k + 1, j, i) - f.get(k, j, i));
            }
        }
    }
    m / profile.grid.dz
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{Expr, Family, MediumSpec, ReactionParams};

    fn ctx_of(spec: &MediumSpec) -> FrontContext {
        FrontContext::from_medium(&Medium::from_spec(spec).unwrap()).unwrap()
    }

    #[test]
    fn path_parses() {
        assert_eq!("kpp".parse::<FrontPath>().unwrap(), FrontPath::Kpp);
        assert_eq!("general".parse::<FrontPath>().unwrap(), FrontPath::General);
        assert!("other".parse::<FrontPath>().is_err());
    }

    #[test]
    fn constant_kpp_front_is_ordered() {
        let ctx = ctx_of(&MediumSpec::constant(1.0, 0.0, 16));
        assert!((ctx.beta() - 2.0).abs() < 1e-12);
        let prof = monotone_iteration(&ctx, 2.5, 0.2, 8.0, FrontPath::Kpp, &FrontOptions::default()).unwrap();
        assert!(prof.outer_defect <= 1e-10, "{}", prof.outer_defect);
        assert!(prof.monotone_defect <= 1e-8);
        assert!(prof.sandwich_ok(1e-10));
        assert!(prof.barriers.sub_residual <= 1e-10, "{}", prof.barriers.sub_residual);
        assert!(prof.barriers.super_residual >= -1e-10, "{}", prof.barriers.super_residual);
        let g = prof.grid;
        assert!(prof.phi.plane_mean(g.nz) > 0.999);
        assert!(prof.phi.values.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn first_iterate_is_below_supersolution() {
        let ctx = ctx_of(&MediumSpec::constant(1.0, 0.0, 16));
        let opts = FrontOptions { max_outer: 1, tol: 1e30, ..FrontOptions::default() };
        let prof = monotone_iteration(&ctx, 2.5, 0.2, 8.0, FrontPath::Kpp, &opts).unwrap();
        assert_eq!(prof.iters, 1);
        assert!(prof.phi.max_excess(&prof.barriers.zeta) <= 1e-12);
    }

    #[test]
    fn heterogeneous_time_dependent_front() {
        let spec = MediumSpec::heterogeneous(Expr::cos_t(1.0, 0.3), Expr::constant(0.0), Expr::cos_x(1.0, 0.5), 8);
        let ctx = ctx_of(&spec);
        let prof = monotone_iteration(&ctx, 3.0, 0.2, 4.0, FrontPath::Kpp, &FrontOptions::default()).unwrap();
        assert!(prof.measured_contraction < 1.0);
        assert!(prof.outer_defect <= 1e-10);
        assert!(prof.monotone_defect <= 1e-8);
        assert!(prof.sandwich_ok(1e-10));
    }

    #[test]
    fn half_length_below_peak_is_rejected() {
        let ctx = ctx_of(&MediumSpec::constant(1.0, 0.0, 16));
        let err = monotone_iteration(&ctx, 2.5, 0.2, 1.0, FrontPath::Kpp, &FrontOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)), "{err}");
    }

    #[test]
    fn subcritical_front_is_rejected() {
        let ctx = ctx_of(&MediumSpec::constant(1.0, 0.0, 16));
        let err = monotone_iteration(&ctx, 1.9, 0.2, 8.0, FrontPath::Kpp, &FrontOptions::default()).unwrap_err();
        assert!(err.to_string().contains("subcritical"), "{err}");
    }

    #[test]
    fn general_path_pins_the_unit_slab() {
        let spec = MediumSpec::constant(1.0, 0.0, 8)
            .with_family(Family::CubicNonKpp, ReactionParams { mu: None, alpha: Some(2.0), theta: None });
        let ctx = ctx_of(&spec);
        let prof = monotone_iteration(&ctx, 3.5, 0.3, 6.0, FrontPath::General, &FrontOptions::default()).unwrap();
        assert!(prof.monotone_defect <= 1e-8);
        assert!(prof.sandwich_ok(1e-10));
        let target = 0.5 * prof.barriers.sub.theta_minus;
        let got = unit_slab_mean(&prof.phi, &prof.grid);
        assert!(prof.tau.abs() < prof.grid.a);
        assert!((got - target).abs() < 0.05 * target + 1e-3, "{got} vs {target}");
    }

    #[test]
    fn kpp_path_refuses_pushed_reaction() {
        let spec = MediumSpec::constant(1.0, 0.0, 8)
            .with_family(Family::CubicNonKpp, ReactionParams { mu: None, alpha: Some(8.0), theta: None });
        let ctx = ctx_of(&spec);
        let err = monotone_iteration(&ctx, 4.0, 0.2, 6.0, FrontPath::Kpp, &FrontOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn sweep_rejects_unsorted_values() {
        let ctx = ctx_of(&MediumSpec::constant(1.0, 0.0, 8));
        let err = eps_sweep(&ctx, 2.5, &[0.1, 0.2], 6.0, FrontPath::Kpp, &FrontOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
