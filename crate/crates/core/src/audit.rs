//! The cross-module audit: one pass/fail row per reproducible check.
//!
//! Every row builds its own medium, so rows are independent and run in
//! parallel; results do not depend on scheduling.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dispersion::{decay_roots, minimal_speed, scan_dispersion, Dispersion, ZeroOrderTag, EIGEN_TOL};
use crate::equilibrium::{compute_equilibrium, uniqueness_probe, DEFAULT_MAX_PERIODS};
use crate::error::{Error, Result};
use crate::floquet::{apply_period_map, principal_eigenpair, TwistedOperator, DEFAULT_MAX_ITERS};
use crate::front::{
    eps_sweep, monotone_iteration, period_map_contraction, profile_diagnostics, BoundaryData, CylinderGrid,
    CylinderOperator, Field3, FrontContext, FrontOptions, FrontPath,
};
use crate::medium::{Expr, Family, GridCounts, Medium, MediumSpec, ReactionParams};
use crate::output::{fmt_f64, Table};
use crate::spreading::{spreading_audit, SpreadOptions};

pub const N_CRITERIA: usize = 12;

/// Outcome of one check. `value` is the measured quantity compared against
/// `threshold` (smaller is better unless stated in `detail`).
#[derive(Debug, Clone, Serialize)]
pub struct AuditRow {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

impl AuditRow {
    fn new(id: usize, passed: bool, value: f64, threshold: f64, detail: String) -> Self {
        Self { id, name: NAMES[id - 1], passed, value, threshold, detail, seconds: 0.0 }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<28} value {:.6e} threshold {:.6e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.value,
            self.threshold,
            self.detail
        )
    }
}

const NAMES: [&str; N_CRITERIA] = [
    "closed_form_eigenvalues",
    "minimal_speeds",
    "decay_roots",
    "dense_monodromy_oracle",
    "dispersion_concavity",
    "front_construction",
    "eps_sweep",
    "contraction_certificate",
    "kpp_spreading",
    "non_kpp_speed_sandwich",
    "equilibrium",
    "determinism",
];

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    pub passed: bool,
}

impl AuditReport {
    /// `criterion,name,status,value,threshold`; no timings, so equal runs
    /// give equal bytes.
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["criterion", "name", "status", "value", "threshold"]);
        for r in &self.rows {
            t.push(vec![
                r.id.to_string(),
                r.name.to_string(),
                if r.passed { "pass" } else { "fail" }.to_string(),
                fmt_f64(r.value),
                fmt_f64(r.threshold),
            ]);
        }
        t
    }
}

/// Runs all rows.
pub fn run_audit(seed: u64) -> AuditReport {
    let rows: Vec<AuditRow> = (1..=N_CRITERIA).into_par_iter().map(|id| run_criterion(id, seed)).collect();
    let passed = rows.iter().all(|r| r.passed);
    AuditReport { rows, passed }
}

/// Runs one row; errors become failing rows carrying the message.
pub fn run_criterion(id: usize, seed: u64) -> AuditRow {
    let t = Instant::now();
    let res = match id {
        1 => closed_form_eigenvalues(),
        2 => minimal_speeds(),
        3 => decay_root_check(),
        4 => dense_monodromy(),
        5 => concavity(),
        6 => front_construction(),
        7 => sweep(),
        8 => contraction(seed),
        9 => kpp_spreading(),
        10 => non_kpp_sandwich(),
        11 => equilibrium(seed),
        12 => determinism(seed),
        _ => Err(Error::Config(format!("no audit criterion {id}"))),
    };
    let mut row = res.unwrap_or_else(|e| AuditRow::new(id.clamp(1, N_CRITERIA), false, f64::NAN, f64::NAN, e.to_string()));
    row.seconds = t.elapsed().as_secs_f64();
    row
}

fn medium(spec: &MediumSpec) -> Result<Medium> {
    Medium::from_spec(spec)
}

fn logistic_mu(mu: Expr, n: usize) -> MediumSpec {
    MediumSpec::heterogeneous(Expr::constant(1.0), Expr::constant(0.0), mu, n)
}

fn closed_form_eigenvalues() -> Result<AuditRow> {
    let (a, q, mu) = (1.2, 0.5, 1.5);
    let spec = MediumSpec::heterogeneous(Expr::constant(a), Expr::constant(q), Expr::constant(mu), 32).refined(2);
    let m = medium(&spec)?;
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for lambda in [0.0, 0.5, 1.0, 2.0] {
        let op = TwistedOperator::new(&m.coeffs, &m.coeffs.mu, lambda, 1.0)?;
        let k = principal_eigenpair(&op, EIGEN_TOL, DEFAULT_MAX_ITERS)?.k;
        let exact = q * lambda - a * lambda * lambda - mu;
        let rel = (k - exact).abs() / exact.abs();
        worst = worst.max(rel);
        detail += &format!("k({lambda})={k:.9} ");
    }
    Ok(AuditRow::new(1, worst <= 1e-6, worst, 1e-6, detail.trim_end().to_string()))
}

fn minimal_speeds() -> Result<AuditRow> {
    let m = medium(&MediumSpec::constant(1.0, 0.0, 32))?;
    let md = medium(&MediumSpec::constant(1.0, 0.5, 32))?;
    let cases = [
        (&m, 1.0, 0.0, 2.0),
        (&md, 1.0, 0.0, 1.5),
        (&md, -1.0, 0.0, 2.5),
        (&m, 1.0, 0.25, 2.0 * 1.25f64.sqrt()),
    ];
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for (med, e, eps, exact) in cases {
        let c = minimal_speed(&Dispersion::new(&med.coeffs, &med.coeffs.mu, e), ZeroOrderTag::Mu, eps)?.c_star;
        worst = worst.max((c - exact).abs());
        detail += &format!("{c:.6} ");
    }
    Ok(AuditRow::new(2, worst <= 1e-3, worst, 1e-3, detail.trim_end().to_string()))
}

fn decay_root_check() -> Result<AuditRow> {
    let m = medium(&MediumSpec::constant(1.0, 0.0, 32))?;
    let d = Dispersion::new(&m.coeffs, &m.coeffs.mu, 1.0);
    let r = decay_roots(&d, ZeroOrderTag::Mu, 0.0, 2.5)?;
    let err = (r.lam - 0.5).abs().max((r.big_lam - 2.0).abs());
    let seq = [0.2, 0.1, 0.05, 0.025]
        .iter()
        .map(|&eps| decay_roots(&d, ZeroOrderTag::Mu, eps, 2.5))
        .collect::<Result<Vec<_>>>()?;
    let gaps: Vec<(f64, f64)> = seq.iter().map(|s| ((s.lam - r.lam).abs(), (s.big_lam - r.big_lam).abs())).collect();
    let monotone = gaps.windows(2).all(|w| w[1].0 < w[0].0 && w[1].1 < w[0].1);
    Ok(AuditRow::new(
        3,
        err <= 1e-6 && monotone,
        err,
        1e-6,
        format!("lam={:.9} Lam={:.9} eps-sequence monotone={monotone}", r.lam, r.big_lam),
    ))
}

/// Perron root of the period map assembled column by column and solved
/// densely.
pub fn dense_monodromy_k(op: &TwistedOperator) -> Result<f64> {
    let n = op.grid.nx;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        let col = apply_period_map(op, &e)?;
        for (r, v) in col.iter().enumerate() {
            m[(r, c)] = *v;
        }
    }
    let rho = m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if !(rho > 0.0) {
        return Err(Error::Numerical("dense period map has zero spectral radius".into()));
    }
    Ok(-rho.ln() / op.grid.t_period)
}

fn dense_monodromy() -> Result<AuditRow> {
    let m = medium(&logistic_mu(Expr::cos_x(1.0, 0.5), 16))?;
    let mut worst: f64 = 0.0;
    for lambda in [0.0, 0.5, 1.0, 1.5, 2.0] {
        let op = TwistedOperator::new(&m.coeffs, &m.coeffs.mu, lambda, 1.0)?;
        let k = principal_eigenpair(&op, EIGEN_TOL, DEFAULT_MAX_ITERS)?.k;
        worst = worst.max((k - dense_monodromy_k(&op)?).abs());
    }
    Ok(AuditRow::new(4, worst <= 1e-6, worst, 1e-6, "five twists".into()))
}

fn concavity() -> Result<AuditRow> {
    let specs = [
        MediumSpec::constant(1.0, 0.0, 32),
        logistic_mu(Expr::cos_x(1.0, 0.5), 32),
        logistic_mu(Expr::cos_t(1.0, 0.5), 32),
    ];
    let mut ok = true;
    let mut worst = f64::NEG_INFINITY;
    for spec in &specs {
        let m = medium(spec)?;
        let curve = scan_dispersion(&Dispersion::new(&m.coeffs, &m.coeffs.mu, 1.0), ZeroOrderTag::Mu, 0.0, 3.0, 33)?;
        ok &= curve.concave && curve.bounds_ok;
        worst = worst.max(curve.concavity_violation - curve.tol_conc).max(curve.bound_violation);
    }
    Ok(AuditRow::new(5, ok, worst, 0.0, "value: worst excess over the tolerance".into()))
}

fn front_construction() -> Result<AuditRow> {
    let m = medium(&MediumSpec::constant(1.0, 0.0, 16))?;
    let ctx = FrontContext::from_medium(&m)?;
    let prof = monotone_iteration(&ctx, 2.5, 0.1, 15.0, FrontPath::Kpp, &FrontOptions::default())?;
    let d = Dispersion::new(&m.coeffs, &m.coeffs.mu, 1.0);
    let rep = profile_diagnostics(&prof, &decay_roots(&d, ZeroOrderTag::Mu, 0.0, 2.5)?);
    let ok = prof.outer_defect <= 1e-10
        && prof.monotone_defect <= 1e-8
        && prof.sandwich_ok(0.0)
        && rep.tail_rel_error <= 0.05
        && rep.right_limit_error <= 1e-4;
    Ok(AuditRow::new(
        6,
        ok,
        rep.tail_rel_error,
        0.05,
        format!(
            "tail slope {:.6} outer {:.1e} monotone {:.1e} sandwich {:.1e} right {:.1e}",
            rep.tail_slope, prof.outer_defect, prof.monotone_defect, prof.sandwich_defect, rep.right_limit_error
        ),
    ))
}

fn sweep() -> Result<AuditRow> {
    let m = medium(&MediumSpec::constant(1.0, 0.0, 8))?;
    let ctx = FrontContext::from_medium(&m)?;
    let s = eps_sweep(&ctx, 2.5, &[0.2, 0.1, 0.05], 15.0, FrontPath::Kpp, &FrontOptions::default())?;
    let ok = s.decreasing && s.variation_ok && s.slope_ok;
    let ratio = s.distances[1] / s.distances[0];
    Ok(AuditRow::new(
        7,
        ok,
        ratio,
        1.0,
        format!(
            "distances {:?} variation ok {} slope ok {}",
            s.distances.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>(),
            s.variation_ok,
            s.slope_ok
        ),
    ))
}

/// Five seeded random pairs through the cylinder period map.
pub fn contraction_factors(seed: u64) -> Result<(Vec<f64>, f64)> {
    let mut spec = MediumSpec::heterogeneous(Expr::cos_t(1.0, 0.3), Expr::cos_x(0.2, 0.3), Expr::constant(1.0), 8);
    spec.grid = GridCounts { nt: 32, nx: 8 };
    let m = medium(&spec)?;
    let g = CylinderGrid::new(2.0, m.grid)?;
    let beta = 2.0;
    let op = CylinderOperator::new(&m.coeffs, g, 2.5, 0.1, beta, 1.0)?;
    let qx = m.coeffs.q.dx_centered(m.grid.dx()).sup_norm();
    let bound = (-(beta - 0.5 * qx) * m.grid.t_period).exp() + 0.01;
    let rhs = Field3::zeros(&g);
    let bc = BoundaryData::zeros(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = (0..5)
        .map(|_| {
            let u = Field3::from_fn(&g, |_, _, _| rng.gen::<f64>());
            let v = Field3::from_fn(&g, |_, _, _| rng.gen::<f64>());
            period_map_contraction(&op, &rhs, &bc, &u, &v)
        })
        .collect();
    Ok((factors, bound))
}

fn contraction(seed: u64) -> Result<AuditRow> {
    let (factors, bound) = contraction_factors(seed)?;
    let worst = factors.iter().copied().fold(0.0f64, f64::max);
    Ok(AuditRow::new(8, worst <= bound, worst, bound, "five random pairs".into()))
}

fn kpp_spreading() -> Result<AuditRow> {
    let m = medium(&logistic_mu(Expr::cos_x(1.0, 0.5), 32))?;
    let a = spreading_audit(&m.coeffs, &m.nl, 1.0, &SpreadOptions::default())?;
    let rel = (a.c_hat - a.c_star_mu).abs() / a.c_star_mu;
    Ok(AuditRow::new(
        9,
        a.passed() && rel <= 0.05,
        rel,
        0.05,
        format!(
            "c_hat {:.6} c*(mu) {:.6} below-frame distance {:?} above-frame sup {:.3e}",
            a.c_hat, a.c_star_mu, a.below_distance, a.above_sup
        ),
    ))
}

fn non_kpp_sandwich() -> Result<AuditRow> {
    let spec = MediumSpec::constant(1.0, 0.0, 32)
        .with_family(Family::CubicNonKpp, ReactionParams { alpha: Some(8.0), ..Default::default() });
    let m = medium(&spec)?;
    let a = spreading_audit(&m.coeffs, &m.nl, 1.0, &SpreadOptions::default())?;
    let (lo, hi) = (2.0 * 0.95, 3.182 * 1.05);
    let ok = a.c_hat >= lo && a.c_hat <= hi && a.passed();
    Ok(AuditRow::new(
        10,
        ok,
        a.c_hat,
        hi,
        format!("c_hat {:.6} in [{lo}, {hi}]; c*(mu) {:.6} c*(eta) {:.6}", a.c_hat, a.c_star_mu, a.c_star_eta),
    ))
}

fn equilibrium(seed: u64) -> Result<AuditRow> {
    let m = medium(&MediumSpec::constant(1.0, 0.0, 32))?;
    let st = compute_equilibrium(&m.coeffs, &m.nl, 1e-12, DEFAULT_MAX_PERIODS)?;
    let err = st.p.values.iter().fold(0.0f64, |e, v| e.max((v - 1.0).abs()));
    let h = medium(&logistic_mu(Expr::cos_x(1.0, 0.5), 32))?;
    let hs = compute_equilibrium(&h.coeffs, &h.nl, 1e-10, DEFAULT_MAX_PERIODS)?;
    let probe = uniqueness_probe(&h.coeffs, &h.nl, &hs, 5, 1e-10, seed);
    let (ok_probe, dist) = match probe {
        Ok(r) => (r.seeds.len() == 5 && r.max_distance <= 1e-6, r.max_distance),
        Err(Error::UniquenessViolation { distance, .. }) => (false, distance),
        Err(e) => return Err(e),
    };
    Ok(AuditRow::new(
        11,
        err <= 1e-9 && ok_probe,
        err.max(dist),
        1e-6,
        format!("|p - 1| {err:.3e}, probe distance {dist:.3e}"),
    ))
}

/// Seeded tables rendered twice must agree byte for byte.
fn determinism(seed: u64) -> Result<AuditRow> {
    let render = || -> Result<String> {
        let (factors, _) = contraction_factors(seed)?;
        let mut t = Table::new(&["pair", "factor"]);
        for (k, f) in factors.iter().enumerate() {
            t.push(vec![k.to_string(), fmt_f64(*f)]);
        }
        let h = medium(&logistic_mu(Expr::cos_x(1.0, 0.5), 16))?;
        let hs = compute_equilibrium(&h.coeffs, &h.nl, 1e-10, DEFAULT_MAX_PERIODS)?;
        let probe = uniqueness_probe(&h.coeffs, &h.nl, &hs, 5, 1e-10, seed)?;
        let mut u = Table::new(&["seed", "distance"]);
        for (k, o) in probe.seeds.iter().enumerate() {
            u.push(vec![k.to_string(), fmt_f64(o.distance)]);
        }
        Ok(t.render() + &u.render())
    };
    let (a, b) = (render()?, render()?);
    let same = a == b;
    Ok(AuditRow::new(12, same, if same { 0.0 } else { 1.0 }, 0.0, "seeded tables rendered twice".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_criterion_fails_cleanly() {
        let r = run_criterion(13, 0);
        assert!(!r.passed);
        assert!(r.value.is_nan());
    }

    #[test]
    fn cheap_rows_pass() {
        for id in [2, 3, 8, 12] {
            let r = run_criterion(id, 1);
            assert!(r.passed, "{}", r.line());
        }
    }

    #[test]
    fn table_has_no_timings() {
        let rep = AuditReport { rows: vec![AuditRow::new(2, true, 1e-4, 1e-3, String::new())], passed: true };
        assert_eq!(
            rep.table().render(),
            "criterion,name,status,value,threshold\n2,minimal_speeds,pass,1.0000000000000000e-4,1.0000000000000000e-3\n"
        );
    }
}
