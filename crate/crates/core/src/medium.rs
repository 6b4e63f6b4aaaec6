//! Periodic medium: torus grid, coefficient fields, reaction families and
//! TOML configuration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::optimize::golden_section;

/// Uniform sampling of the periodicity cell `[0,T) x [0,L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub t_period: f64,
    pub x_period: f64,
    pub nt: usize,
    pub nx: usize,
}

impl TorusGrid {
    pub fn new(t_period: f64, x_period: f64, nt: usize, nx: usize) -> Result<Self> {
        if !(t_period > 0.0) || !t_period.is_finite() {
            return Err(Error::Config(format!("time period must be positive, got {t_period}")));
        }
        if !(x_period > 0.0) || !x_period.is_finite() {
            return Err(Error::Config(format!("space period must be positive, got {x_period}")));
        }
        if nt < 8 || nx < 8 {
            return Err(Error::Config(format!("grid counts must be >= 8, got nt={nt}, nx={nx}")));
        }
        Ok(Self { t_period, x_period, nt, nx })
    }

    pub fn dt(&self) -> f64 {
        self.t_period / self.nt as f64
    }

    pub fn dx(&self) -> f64 {
        self.x_period / self.nx as f64
    }

    pub fn len(&self) -> usize {
        self.nt * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn t_at(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    pub fn x_at(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    /// Cyclic index in t.
    pub fn wrap_t(&self, j: isize) -> usize {
        j.rem_euclid(self.nt as isize) as usize
    }

    /// Cyclic index in x.
    pub fn wrap_x(&self, i: isize) -> usize {
        i.rem_euclid(self.nx as isize) as usize
    }

    /// Halves dt and dx `k` times.
    pub fn refined(&self, k: u32) -> Self {
        let f = 1usize << k;
        Self { nt: self.nt * f, nx: self.nx * f, ..*self }
    }
}

/// Real field on the torus nodes, stored t-major (`values[j * nx + i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub nt: usize,
    pub nx: usize,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn constant(grid: &TorusGrid, v: f64) -> Self {
        Self { nt: grid.nt, nx: grid.nx, values: vec![v; grid.len()] }
    }

    pub fn from_fn(grid: &TorusGrid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.nt {
            for i in 0..grid.nx {
                values.push(f(j, i));
            }
        }
        Self { nt: grid.nt, nx: grid.nx, values }
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.values[(j % self.nt) * self.nx + (i % self.nx)]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let j = j % self.nt;
        &self.values[j * self.nx..(j + 1) * self.nx]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        let j = j % self.nt;
        &mut self.values[j * self.nx..(j + 1) * self.nx]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { nt: self.nt, nx: self.nx, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Centered periodic difference in x.
    pub fn dx_centered(&self, dx: f64) -> Self {
        let nx = self.nx;
        let mut out = self.clone();
        for j in 0..self.nt {
            let row = self.row(j);
            let dst = out.row_mut(j);
            for i in 0..nx {
                let ip = if i + 1 == nx { 0 } else { i + 1 };
                let im = if i == 0 { nx - 1 } else { i - 1 };
                dst[i] = (row[ip] - row[im]) / (2.0 * dx);
            }
        }
        out
    }
}

/// Coefficient expression templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expr {
    Constant {
        value: f64,
    },
    /// `mean + amp * cos(2 pi mode x / L + phase)`
    CosX {
        mean: f64,
        amp: f64,
        #[serde(default = "one")]
        mode: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `mean + amp * cos(2 pi mode t / T + phase)`
    CosT {
        mean: f64,
        amp: f64,
        #[serde(default = "one")]
        mode: f64,
        #[serde(default)]
        phase: f64,
    },
    Product {
        factors: Vec<Expr>,
    },
}

fn one() -> f64 {
    1.0
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Constant { value }
    }

    pub fn cos_x(mean: f64, amp: f64) -> Self {
        Expr::CosX { mean, amp, mode: 1.0, phase: 0.0 }
    }

    pub fn cos_t(mean: f64, amp: f64) -> Self {
        Expr::CosT { mean, amp, mode: 1.0, phase: 0.0 }
    }

    pub fn eval(&self, t: f64, x: f64, grid: &TorusGrid) -> f64 {
        match self {
            Expr::Constant { value } => *value,
            Expr::CosX { mean, amp, mode, phase } => {
                mean + amp * (2.0 * PI * mode * x / grid.x_period + phase).cos()
            }
            Expr::CosT { mean, amp, mode, phase } => {
                mean + amp * (2.0 * PI * mode * t / grid.t_period + phase).cos()
            }
            Expr::Product { factors } => factors.iter().map(|f| f.eval(t, x, grid)).product(),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Constant { .. } => true,
            Expr::CosX { amp, .. } | Expr::CosT { amp, .. } => *amp == 0.0,
            Expr::Product { factors } => factors.iter().all(Expr::is_constant),
        }
    }

    fn sample(&self, grid: &TorusGrid) -> Result<ScalarField> {
        let field = ScalarField::from_fn(grid, |j, i| self.eval(grid.t_at(j), grid.x_at(i), grid));
        if !field.is_finite() {
            return Err(Error::Config(format!("expression {self:?} is not finite on the grid")));
        }
        Ok(field)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    #[default]
    Divergence,
    Nondivergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    HomogeneousLogistic,
    HeterogeneousLogistic,
    CubicNonKpp,
    Ignition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Periods {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCounts {
    pub nt: usize,
    pub nx: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ReactionParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Reaction {
    #[serde(default)]
    pub family: Family,
    #[serde(default)]
    pub params: ReactionParams,
}

/// Parsed configuration of a medium.
///
/// In nondivergence form `diffusion` and `drift` are read as the
/// coefficients of `alpha u_xx` and `beta u_x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSpec {
    #[serde(default)]
    pub form: Form,
    /// Propagation direction e = +1 or -1.
    #[serde(default = "default_direction")]
    pub direction: i8,
    pub periods: Periods,
    pub grid: GridCounts,
    pub diffusion: Expr,
    pub drift: Expr,
    #[serde(default)]
    pub reaction: Reaction,
}

fn default_direction() -> i8 {
    1
}

impl Default for MediumSpec {
    fn default() -> Self {
        Self::constant(1.0, 0.0, 32)
    }
}

impl MediumSpec {
    /// Homogeneous logistic medium with constant diffusion and drift on a unit torus.
    pub fn constant(a: f64, q: f64, n: usize) -> Self {
        Self {
            form: Form::Divergence,
            direction: 1,
            periods: Periods { t: 1.0, l: 1.0 },
            grid: GridCounts { nt: n, nx: n },
            diffusion: Expr::constant(a),
            drift: Expr::constant(q),
            reaction: Reaction::default(),
        }
    }

    /// Logistic medium `u (mu(t,x) - u)` with the given growth-rate template.
    pub fn heterogeneous(a: Expr, q: Expr, mu: Expr, n: usize) -> Self {
        let mut s = Self::constant(1.0, 0.0, n);
        s.diffusion = a;
        s.drift = q;
        s.reaction = Reaction {
            family: Family::HeterogeneousLogistic,
            params: ReactionParams { mu: Some(mu), ..Default::default() },
        };
        s
    }

    pub fn with_family(mut self, family: Family, params: ReactionParams) -> Self {
        self.reaction = Reaction { family, params };
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.direction != 1 && self.direction != -1 {
            return Err(Error::Config(format!("direction must be +1 or -1, got {}", self.direction)));
        }
        let p = &self.reaction.params;
        match self.reaction.family {
            Family::HeterogeneousLogistic if p.mu.is_none() => {
                return Err(Error::Config("heterogeneous_logistic needs reaction.params.mu".into()))
            }
            Family::CubicNonKpp => match p.alpha {
                Some(a) if a > 0.0 && a.is_finite() => {}
                other => {
                    return Err(Error::Config(format!(
                        "cubic_non_kpp needs reaction.params.alpha > 0, got {other:?}"
                    )))
                }
            },
            Family::Ignition => match p.theta {
                Some(t) if t > 0.0 && t < 1.0 => {}
                other => {
                    return Err(Error::Config(format!(
                        "ignition needs reaction.params.theta in (0,1), got {other:?}"
                    )))
                }
            },
            _ => {}
        }
        build_grid(self).map(|_| ())
    }

    pub fn refined(&self, k: u32) -> Self {
        let mut s = self.clone();
        s.grid.nt <<= k;
        s.grid.nx <<= k;
        s
    }
}

pub fn build_grid(spec: &MediumSpec) -> Result<TorusGrid> {
    TorusGrid::new(spec.periods.t, spec.periods.l, spec.grid.nt, spec.grid.nx)
}

/// Diffusion, drift and linearized growth sampled on the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub grid: TorusGrid,
    pub a: ScalarField,
    pub q: ScalarField,
    pub mu: ScalarField,
    /// Ellipticity floor (min of `a`).
    pub gamma_ell: f64,
    /// Ellipticity ceiling (max of `a`).
    pub gamma_cap: f64,
}

impl CoefficientSet {
    pub fn new(grid: TorusGrid, a: ScalarField, q: ScalarField, mu: ScalarField) -> Result<Self> {
        for j in 0..grid.nt {
            for i in 0..grid.nx {
                let v = a.get(j, i);
                if !(v > 0.0) {
                    return Err(Error::Ellipticity { value: v, t_index: j, x_index: i });
                }
            }
        }
        for (name, f) in [("drift", &q), ("growth rate", &mu)] {
            if !f.is_finite() {
                return Err(Error::Config(format!("{name} field is not finite")));
            }
        }
        let (gamma_ell, gamma_cap) = (a.min(), a.max());
        Ok(Self { grid, a, q, mu, gamma_ell, gamma_cap })
    }

    /// Centered difference of the diffusion coefficient in x.
    pub fn da_dx(&self) -> ScalarField {
        self.a.dx_centered(self.grid.dx())
    }

    /// Same medium with a different linearized growth field.
    pub fn with_mu(&self, mu: ScalarField) -> Self {
        Self { mu, ..self.clone() }
    }

    /// Mirror image `x -> -x`: reverses the drift sign for symmetric media.
    pub fn with_q(&self, q: ScalarField) -> Self {
        Self { q, ..self.clone() }
    }
}

/// Samples the coefficient templates, converting nondivergence form if asked.
pub fn sample_coefficients(spec: &MediumSpec, grid: &TorusGrid) -> Result<CoefficientSet> {
    let a = spec.diffusion.sample(grid)?;
    let drift = spec.drift.sample(grid)?;
    let q = match spec.form {
        Form::Divergence => drift,
        Form::Nondivergence => {
            let dalpha = a.dx_centered(grid.dx());
            ScalarField {
                values: drift.values.iter().zip(&dalpha.values).map(|(b, d)| b - d).collect(),
                ..drift
            }
        }
    };
    let mu = growth_rate(spec, grid)?;
    CoefficientSet::new(*grid, a, q, mu)
}

fn growth_rate(spec: &MediumSpec, grid: &TorusGrid) -> Result<ScalarField> {
    let p = &spec.reaction.params;
    match spec.reaction.family {
        Family::HomogeneousLogistic | Family::CubicNonKpp => Ok(ScalarField::constant(grid, 1.0)),
        Family::Ignition => Ok(ScalarField::constant(grid, 0.0)),
        Family::HeterogeneousLogistic => p
            .mu
            .as_ref()
            .ok_or_else(|| Error::Config("heterogeneous_logistic needs reaction.params.mu".into()))?
            .sample(grid),
    }
}

/// Reaction term `f(t, x, u)` evaluated at torus nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Nonlinearity {
    pub family: Family,
    /// `f_u(t, x, 0)` at every node.
    pub mu: ScalarField,
    pub alpha: f64,
    pub theta: f64,
    /// Whether `f(t,x,s) <= mu(t,x) s` for all `s >= 0`.
    pub kpp_flag: bool,
    /// Constants with `mu u <= rho u^(1+r) + f(u)` on `[0, beta_reg]`.
    pub rho: f64,
    pub r: f64,
    pub beta_reg: f64,
}

pub fn build_nonlinearity(spec: &MediumSpec, grid: &TorusGrid) -> Result<Nonlinearity> {
    spec.validate()?;
    let mu = growth_rate(spec, grid)?;
    let p = &spec.reaction.params;
    let (alpha, theta) = (p.alpha.unwrap_or(0.0), p.theta.unwrap_or(0.0));
    let (kpp_flag, beta_reg) = match spec.reaction.family {
        Family::HomogeneousLogistic | Family::HeterogeneousLogistic => (true, f64::INFINITY),
        Family::CubicNonKpp => (alpha <= 1.0, 1.0),
        Family::Ignition => (false, 1.0),
    };
    Ok(Nonlinearity { family: spec.reaction.family, mu, alpha, theta, kpp_flag, rho: 1.0, r: 1.0, beta_reg })
}

impl Nonlinearity {
    pub fn homogeneous_logistic(grid: &TorusGrid) -> Self {
        Self {
            family: Family::HomogeneousLogistic,
            mu: ScalarField::constant(grid, 1.0),
            alpha: 0.0,
            theta: 0.0,
            kpp_flag: true,
            rho: 1.0,
            r: 1.0,
            beta_reg: f64::INFINITY,
        }
    }

    /// `f` at node `(j, i)` (indices taken cyclically).
    #[inline]
    pub fn eval(&self, j: usize, i: usize, s: f64) -> f64 {
        match self.family {
            Family::HomogeneousLogistic => s * (1.0 - s),
            Family::HeterogeneousLogistic => s * (self.mu.get(j, i) - s),
            Family::CubicNonKpp => s * (1.0 - s) * (1.0 + self.alpha * s),
            Family::Ignition => {
                if s > self.theta {
                    (s - self.theta) * (1.0 - s)
                } else {
                    0.0
                }
            }
        }
    }

    /// `df/du` at node `(j, i)`.
    pub fn deriv(&self, j: usize, i: usize, s: f64) -> f64 {
        match self.family {
            Family::HomogeneousLogistic => 1.0 - 2.0 * s,
            Family::HeterogeneousLogistic => self.mu.get(j, i) - 2.0 * s,
            Family::CubicNonKpp => {
                let a = self.alpha;
                1.0 + 2.0 * (a - 1.0) * s - 3.0 * a * s * s
            }
            Family::Ignition => {
                if s > self.theta {
                    1.0 + self.theta - 2.0 * s
                } else {
                    0.0
                }
            }
        }
    }

    /// Level above which `f <= 0` everywhere; the march for `p` starts here.
    pub fn saturation(&self) -> f64 {
        match self.family {
            Family::HomogeneousLogistic | Family::HeterogeneousLogistic => self.mu.max().max(0.0) + 1.0,
            Family::CubicNonKpp | Family::Ignition => 2.0,
        }
    }

    /// Upper bound of `|f_u|` on `[0, smax]`, sampled at every node.
    pub fn lipschitz(&self, smax: f64) -> f64 {
        let ns = 256;
        let mut lip: f64 = 0.0;
        for j in 0..self.mu.nt {
            for i in 0..self.mu.nx {
                for k in 0..=ns {
                    let s = smax * k as f64 / ns as f64;
                    lip = lip.max(self.deriv(j, i, s).abs());
                }
            }
        }
        lip
    }
}

/// Pointwise `sup_{0<s<p} f(t,x,s)/s`, including the `s -> 0` limit `mu`.
pub fn evaluate_eta(nl: &Nonlinearity, p: &ScalarField, grid: &TorusGrid, ns: usize) -> Result<ScalarField> {
    if ns < 64 {
        return Err(Error::Config(format!("eta sampling needs ns >= 64, got {ns}")));
    }
    if p.values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("eta needs p > 0 at every node".into()));
    }
    let nx = grid.nx;
    let values = (0..grid.len())
        .into_par_iter()
        .map(|idx| eta_at(nl, idx / nx, idx % nx, p.values[idx], ns))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScalarField { nt: grid.nt, nx, values })
}

fn eta_at(nl: &Nonlinearity, j: usize, i: usize, pmax: f64, ns: usize) -> Result<f64> {
    let ratio = |s: f64| nl.eval(j, i, s) / s;
    // Half the samples geometric toward 0, half uniform.
    let half = ns / 2;
    let mut samples = Vec::with_capacity(ns + 1);
    for k in 0..half {
        samples.push(pmax * 10f64.powf(-12.0 * (1.0 - k as f64 / half as f64)));
    }
    for k in 1..=ns - half {
        samples.push(pmax * k as f64 / (ns - half) as f64);
    }
    samples.sort_by(|a, b| a.total_cmp(b));
    let mut best = (nl.mu.get(j, i), None);
    for (k, &s) in samples.iter().enumerate() {
        let v = ratio(s);
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("f/s not finite at node ({j},{i}), s={s}")));
        }
        if v > best.0 {
            best = (v, Some(k));
        }
    }
    if let Some(k) = best.1 {
        let lo = if k == 0 { 0.0 } else { samples[k - 1] };
        let hi = samples[(k + 1).min(samples.len() - 1)];
        if hi > lo {
            let m = golden_section(|s| Ok(-ratio(s.max(f64::MIN_POSITIVE))), lo, hi, 1e-12, 200)?;
            best.0 = best.0.max(-m.fx);
        }
    }
    Ok(best.0)
}

/// Everything a computation needs about one medium.
#[derive(Debug, Clone)]
pub struct Medium {
    pub spec: MediumSpec,
    pub grid: TorusGrid,
    pub coeffs: CoefficientSet,
    pub nl: Nonlinearity,
    pub direction: f64,
}

impl Medium {
    pub fn from_spec(spec: &MediumSpec) -> Result<Self> {
        spec.validate()?;
        let grid = build_grid(spec)?;
        let coeffs = sample_coefficients(spec, &grid)?;
        let nl = build_nonlinearity(spec, &grid)?;
        Ok(Self { spec: spec.clone(), grid, coeffs, nl, direction: spec.direction as f64 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_arithmetic() {
        let g = TorusGrid::new(1.0, 1.0, 32, 32).unwrap();
        assert_eq!(g.dt(), 1.0 / 32.0);
        assert_eq!(g.dx(), 1.0 / 32.0);
        let g = TorusGrid::new(2.0, 2.0 * PI, 64, 128).unwrap();
        assert!((g.dt() - 1.0 / 32.0).abs() < 1e-15);
        assert!((g.dx() - PI / 64.0).abs() < 1e-15);
        assert_eq!(g.wrap_x(-1), 127);
        assert_eq!(g.wrap_t(64), 0);
    }

    #[test]
    fn grid_guards() {
        assert!(matches!(TorusGrid::new(1.0, 1.0, 0, 32), Err(Error::Config(_))));
        assert!(matches!(TorusGrid::new(-1.0, 1.0, 32, 32), Err(Error::Config(_))));
        assert!(matches!(TorusGrid::new(1.0, 1.0, 32, 4), Err(Error::Config(_))));
    }

    #[test]
    fn constant_nondivergence() {
        let mut spec = MediumSpec::constant(1.0, 0.0, 16);
        spec.form = Form::Nondivergence;
        let g = build_grid(&spec).unwrap();
        let c = sample_coefficients(&spec, &g).unwrap();
        assert!(c.a.values.iter().all(|&v| v == 1.0));
        assert!(c.q.values.iter().all(|&v| v == 0.0));
        assert_eq!((c.gamma_ell, c.gamma_cap), (1.0, 1.0));

        spec.drift = Expr::cos_x(0.3, 0.2);
        let c2 = sample_coefficients(&spec, &g).unwrap();
        let beta = spec.drift.sample(&g).unwrap();
        assert_eq!(c2.q, beta);
    }

    #[test]
    fn nondivergence_drift_is_minus_alpha_prime() {
        let n = 64;
        let mut spec = MediumSpec::constant(1.0, 0.0, n);
        spec.form = Form::Nondivergence;
        spec.diffusion = Expr::cos_x(2.0, 1.0);
        let g = build_grid(&spec).unwrap();
        let c = sample_coefficients(&spec, &g).unwrap();
        let h = g.dx();
        for i in 0..n {
            let exact = 2.0 * PI * (2.0 * PI * g.x_at(i)).sin();
            // centered difference error is (2 pi)^3 h^2 / 6 at most
            assert!((c.q.get(0, i) - exact).abs() < (2.0 * PI).powi(3) * h * h / 6.0 + 1e-12);
        }
    }

    #[test]
    fn ellipticity_guard() {
        let mut spec = MediumSpec::constant(1.0, 0.0, 16);
        spec.diffusion = Expr::cos_x(0.0, 1.0);
        let g = build_grid(&spec).unwrap();
        assert!(matches!(sample_coefficients(&spec, &g), Err(Error::Ellipticity { .. })));
    }

    #[test]
    fn sampling_is_idempotent() {
        let spec = MediumSpec::heterogeneous(
            Expr::cos_t(1.0, 0.3),
            Expr::cos_x(0.1, 0.5),
            Expr::Product { factors: vec![Expr::cos_x(1.0, 0.5), Expr::cos_t(1.0, 0.2)] },
            16,
        );
        let g = build_grid(&spec).unwrap();
        let a = sample_coefficients(&spec, &g).unwrap();
        let b = sample_coefficients(&spec, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
form = "nondivergence"
direction = -1
[periods]
T = 2.0
L = 1.0
[grid]
nt = 16
nx = 32
[diffusion]
kind = "cos_x"
mean = 2.0
amp = 0.5
[drift]
kind = "constant"
value = 0.25
[reaction]
family = "cubic_non_kpp"
[reaction.params]
alpha = 8.0
"#;
        let spec = MediumSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.direction, -1);
        assert_eq!(spec.reaction.family, Family::CubicNonKpp);
        let back = toml::to_string(&spec).unwrap();
        assert_eq!(MediumSpec::from_toml_str(&back).unwrap(), spec);
    }

    #[test]
    fn toml_errors_are_config_errors() {
        assert!(matches!(MediumSpec::from_toml_str("nonsense = 1"), Err(Error::Config(_))));
        let mut spec = MediumSpec::constant(1.0, 0.0, 16);
        spec.reaction.family = Family::HeterogeneousLogistic;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn f_vanishes_at_zero_and_matches_mu() {
        let spec = MediumSpec::heterogeneous(Expr::constant(1.0), Expr::constant(0.0), Expr::cos_x(1.0, 0.5), 16);
        let g = build_grid(&spec).unwrap();
        let nl = build_nonlinearity(&spec, &g).unwrap();
        for j in 0..g.nt {
            for i in 0..g.nx {
                assert_eq!(nl.eval(j, i, 0.0), 0.0);
                assert_eq!(nl.deriv(j, i, 0.0), nl.mu.get(j, i));
            }
        }
    }

    fn scan_sup(f: impl Fn(f64) -> f64) -> f64 {
        let n = 1_000_000;
        (1..n).map(|k| f(k as f64 / n as f64)).fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn eta_logistic_is_mu() {
        let g = TorusGrid::new(1.0, 1.0, 8, 8).unwrap();
        let nl = Nonlinearity::homogeneous_logistic(&g);
        let eta = evaluate_eta(&nl, &ScalarField::constant(&g, 1.0), &g, 256).unwrap();
        assert!(eta.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn eta_cubic_matches_scan() {
        let g = TorusGrid::new(1.0, 1.0, 8, 8).unwrap();
        for alpha in [1.0, 8.0] {
            let spec = MediumSpec::constant(1.0, 0.0, 8)
                .with_family(Family::CubicNonKpp, ReactionParams { alpha: Some(alpha), ..Default::default() });
            let nl = build_nonlinearity(&spec, &g).unwrap();
            assert_eq!(nl.kpp_flag, alpha <= 1.0);
            let oracle = scan_sup(|s| (1.0 - s) * (1.0 + alpha * s)).max(1.0);
            let eta = evaluate_eta(&nl, &ScalarField::constant(&g, 1.0), &g, 256).unwrap();
            for &v in &eta.values {
                assert!((v - oracle).abs() < 1e-9, "alpha={alpha}: {v} vs {oracle}");
            }
        }
        let expected = 81.0 / 32.0;
        let oracle = scan_sup(|s| (1.0 - s) * (1.0 + 8.0 * s));
        assert!((oracle - expected).abs() < 1e-10);
    }

    #[test]
    fn eta_dominates_mu() {
        let spec = MediumSpec::heterogeneous(Expr::constant(1.0), Expr::constant(0.0), Expr::cos_x(0.5, 1.0), 8);
        let g = build_grid(&spec).unwrap();
        let nl = build_nonlinearity(&spec, &g).unwrap();
        let p = ScalarField::constant(&g, 2.0);
        let eta = evaluate_eta(&nl, &p, &g, 128).unwrap();
        for (e, m) in eta.values.iter().zip(&nl.mu.values) {
            assert!(e >= m);
        }
    }
}
