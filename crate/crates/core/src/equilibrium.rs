//! The positive space-time periodic state `p` and a numerical uniqueness probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::floquet::TwistedOperator;
use crate::linalg::{CyclicFactor, Tridiagonal};
use crate::medium::{CoefficientSet, Family, Nonlinearity, ScalarField, TorusGrid};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_PERIODS: usize = 10_000;

/// Below this sup value a march is declared extinct.
const EXTINCTION_LEVEL: f64 = 1e-10;
/// A state that stopped changing while this small is the zero state.
const SETTLED_EXTINCT: f64 = 1e-6;

/// IMEX stepper for `u_t = (a u_x)_x - q u_x + f(t, x, u)`, x-periodic:
/// `(I + dt M_{j+1}) u^{j+1} = u^j + dt f(t_j, u^j)`.
#[derive(Debug, Clone)]
pub struct ImexStepper {
    pub grid: TorusGrid,
    factors: Vec<CyclicFactor>,
    factor_of_level: Vec<usize>,
}

impl ImexStepper {
    pub fn new(coeffs: &CoefficientSet) -> Result<Self> {
        let (factors, factor_of_level) = implicit_factors(coeffs, coeffs.grid.dt(), 0.0)?;
        Ok(Self { grid: coeffs.grid, factors, factor_of_level })
    }

    /// Advances `u` from level `j` to level `j + 1`.
    pub fn step(&self, nl: &Nonlinearity, j: usize, u: &mut [f64]) {
        let dt = self.grid.dt();
        for (i, v) in u.iter_mut().enumerate() {
            *v += dt * nl.eval(j, i, *v);
        }
        self.factors[self.factor_of_level[(j + 1) % self.grid.nt]].solve_in_place(u);
    }

    /// Marches one full period from `u` at `t = 0`; returns the levels visited
    /// (`levels.row(j)` is the state at `t_j`) and leaves `u` at `t = T`.
    pub fn period(&self, nl: &Nonlinearity, u: &mut [f64]) -> ScalarField {
        let mut levels = ScalarField::constant(&self.grid, 0.0);
        for j in 0..self.grid.nt {
            levels.row_mut(j).copy_from_slice(u);
            self.step(nl, j, u);
        }
        levels
    }
}

/// Cyclic factors of `(1 + dt beta) I + dt M_j` per time level, deduplicated.
pub(crate) fn implicit_factors(coeffs: &CoefficientSet, dt: f64, beta: f64) -> Result<(Vec<CyclicFactor>, Vec<usize>)> {
    let op = TwistedOperator::new(coeffs, &coeffs.mu, 0.0, 1.0)?;
    let g = coeffs.grid;
    let mut mats: Vec<Tridiagonal> = Vec::new();
    let mut factors = Vec::new();
    let mut index = Vec::with_capacity(g.nt);
    for j in 0..g.nt {
        let m = op.transport(j);
        let sys = Tridiagonal {
            lower: m.lower.iter().map(|v| dt * v).collect(),
            diag: m.diag.iter().map(|v| 1.0 + dt * beta + dt * v).collect(),
            upper: m.upper.iter().map(|v| dt * v).collect(),
        };
        if let Some(pos) = mats.iter().position(|s| *s == sys) {
            index.push(pos);
            continue;
        }
        factors.push(CyclicFactor::new(&sys)?);
        mats.push(sys);
        index.push(factors.len() - 1);
    }
    Ok((factors, index))
}

/// Converged periodic state.
#[derive(Debug, Clone)]
pub struct PeriodicState {
    pub p: ScalarField,
    /// Sup change between the last two periods.
    pub residual: f64,
    pub positivity_floor: f64,
    pub periods: usize,
}

/// Marches from the saturation level until the state is time-periodic.
pub fn compute_equilibrium(coeffs: &CoefficientSet, nl: &Nonlinearity, tol: f64, max_periods: usize) -> Result<PeriodicState> {
    let u0 = vec![nl.saturation(); coeffs.grid.nx];
    march_to_periodic(&ImexStepper::new(coeffs)?, nl, u0, tol, max_periods)
}

fn march_to_periodic(
    stepper: &ImexStepper,
    nl: &Nonlinearity,
    mut u: Vec<f64>,
    tol: f64,
    max_periods: usize,
) -> Result<PeriodicState> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("equilibrium tolerance must be positive, got {tol}")));
    }
    let mut prev: Option<ScalarField> = None;
    let mut change = f64::INFINITY;
    for n in 1..=max_periods {
        let levels = stepper.period(nl, &mut u);
        let (lo, hi) = (levels.min(), levels.max());
        if lo < 0.0 {
            return Err(Error::Positivity { min_value: lo });
        }
        if hi < EXTINCTION_LEVEL {
            return Err(Error::Degeneracy { min_value: lo, periods: n });
        }
        if let Some(pv) = &prev {
            change = pv.max_abs_diff(&levels);
            if change < tol {
                if levels.max() < SETTLED_EXTINCT {
                    return Err(Error::Degeneracy { min_value: levels.min(), periods: n });
                }
                return Ok(PeriodicState { positivity_floor: levels.min(), p: levels, residual: change, periods: n });
            }
        }
        prev = Some(levels);
    }
    Err(Error::NonConvergence(format!(
        "periodic state not reached after {max_periods} periods (last change {change:.3e})"
    )))
}

/// Periodic fixed point of the fully implicit scheme
/// `(u^{j+1} - u^j)/dt + M_{j+1} u^{j+1} = f(t_{j+1}, u^{j+1})`,
/// started from `start` and marched until time-periodic.
///
/// Each step is solved by the monotone iteration
/// `((1/dt + beta) I + M) w = u^j/dt + f(w_old) + beta w_old`.
pub fn implicit_fixed_point(
    coeffs: &CoefficientSet,
    nl: &Nonlinearity,
    start: &ScalarField,
    tol: f64,
    max_periods: usize,
) -> Result<PeriodicState> {
    let g = coeffs.grid;
    let dt = g.dt();
    let smax = start.max() * 1.5 + 1.0;
    let beta = nl.lipschitz(smax) + 1.0;
    let (factors, index) = implicit_factors(coeffs, dt, beta)?;
    let mut u = start.row(0).to_vec();
    let mut rhs = vec![0.0; g.nx];
    let mut prev: Option<ScalarField> = None;
    let mut change = f64::INFINITY;
    for n in 1..=max_periods {
        let mut levels = ScalarField::constant(&g, 0.0);
        for j in 0..g.nt {
            levels.row_mut(j).copy_from_slice(&u);
            let jn = (j + 1) % g.nt;
            let mut w = start.row(jn).to_vec();
            for _ in 0..200 {
                for i in 0..g.nx {
                    rhs[i] = u[i] + dt * (nl.eval(jn, i, w[i]) + beta * w[i]);
                }
                factors[index[jn]].solve_in_place(&mut rhs);
                let d = rhs.iter().zip(&w).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                w.copy_from_slice(&rhs);
                if d < 1e-15 * (1.0 + smax) {
                    break;
                }
            }
            u.copy_from_slice(&w);
        }
        if levels.min() < 0.0 {
            return Err(Error::Positivity { min_value: levels.min() });
        }
        if levels.max() < EXTINCTION_LEVEL {
            return Err(Error::Degeneracy { min_value: levels.min(), periods: n });
        }
        if let Some(pv) = &prev {
            change = pv.max_abs_diff(&levels);
            if change < tol {
                if levels.max() < SETTLED_EXTINCT {
                    return Err(Error::Degeneracy { min_value: levels.min(), periods: n });
                }
                return Ok(PeriodicState { positivity_floor: levels.min(), p: levels, residual: change, periods: n });
            }
        }
        prev = Some(levels);
    }
    Err(Error::NonConvergence(format!(
        "implicit periodic state not reached after {max_periods} periods (last change {change:.3e})"
    )))
}

/// Outcome of one seed of the uniqueness probe.
#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub label: String,
    pub distance: f64,
    /// The seed settled on a lower equilibrium with `inf u` in the region
    /// where `f` vanishes identically (ignition dead zone); not a competitor of `p`.
    pub excluded_lower_state: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub seeds: Vec<SeedOutcome>,
    pub max_distance: f64,
    pub threshold: f64,
}

/// Marches `n_seeds` uniformly positive data toward a periodic state and
/// measures the distance to `p`. Can refute uniqueness, never confirm it.
pub fn uniqueness_probe(
    coeffs: &CoefficientSet,
    nl: &Nonlinearity,
    state: &PeriodicState,
    n_seeds: usize,
    tol: f64,
    seed: u64,
) -> Result<UniquenessReport> {
    if n_seeds < 3 {
        return Err(Error::Config(format!("uniqueness probe needs at least 3 seeds, got {n_seeds}")));
    }
    let g = coeffs.grid;
    let (pmin, pmax) = (state.p.min(), state.p.max());
    let (lo, hi) = (0.1 * pmin, 2.0 * pmax);
    let n_const = n_seeds - 2;
    let mut inits: Vec<(String, Vec<f64>)> = (0..n_const)
        .map(|k| {
            let v = lo + (hi - lo) * k as f64 / (n_const - 1).max(1) as f64;
            (format!("constant {v:.6}"), vec![v; g.nx])
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in 0..2 {
        let amps: Vec<(f64, f64)> = (0..4).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU))).collect();
        let raw: Vec<f64> = (0..g.nx)
            .map(|i| {
                let x = std::f64::consts::TAU * i as f64 / g.nx as f64;
                amps.iter().enumerate().map(|(m, (a, ph))| a * ((m + 1) as f64 * x + ph).cos()).sum::<f64>()
            })
            .collect();
        let (rmin, rmax) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let field = raw.iter().map(|v| lo + (hi - lo) * (v - rmin) / (rmax - rmin).max(1e-300)).collect();
        inits.push((format!("random {r}"), field));
    }
    let stepper = ImexStepper::new(coeffs)?;
    let dead_zone = if nl.family == Family::Ignition { nl.theta } else { 0.0 };
    let outcomes = inits
        .into_par_iter()
        .map(|(label, u0)| {
            let st = march_to_periodic(&stepper, nl, u0, tol, DEFAULT_MAX_PERIODS)?;
            let distance = st.p.max_abs_diff(&state.p);
            let excluded = st.p.max() <= dead_zone;
            Ok(SeedOutcome { label, distance, excluded_lower_state: excluded })
        })
        .collect::<Result<Vec<_>>>()?;
    let threshold = 10.0 * tol;
    let mut max_distance: f64 = 0.0;
    for (k, o) in outcomes.iter().enumerate() {
        if o.excluded_lower_state {
            continue;
        }
        max_distance = max_distance.max(o.distance);
        if o.distance >= threshold.max(1e-6) {
            return Err(Error::UniquenessViolation { seed: k, distance: o.distance });
        }
    }
    Ok(UniquenessReport { seeds: outcomes, max_distance, threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{build_grid, build_nonlinearity, sample_coefficients, Expr, MediumSpec, ReactionParams};

    fn setup(spec: &MediumSpec) -> (CoefficientSet, Nonlinearity) {
        let g = build_grid(spec).unwrap();
        (sample_coefficients(spec, &g).unwrap(), build_nonlinearity(spec, &g).unwrap())
    }

    #[test]
    fn constant_logistic_is_one() {
        let (c, nl) = setup(&MediumSpec::constant(1.0, 0.3, 16));
        let st = compute_equilibrium(&c, &nl, DEFAULT_TOL, DEFAULT_MAX_PERIODS).unwrap();
        assert!(st.p.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!(st.residual < DEFAULT_TOL);
    }

    #[test]
    fn logistic_constant_mu() {
        let spec = MediumSpec::heterogeneous(Expr::constant(1.0), Expr::constant(0.0), Expr::constant(1.7), 16);
        let (c, nl) = setup(&spec);
        let st = compute_equilibrium(&c, &nl, DEFAULT_TOL, DEFAULT_MAX_PERIODS).unwrap();
        assert!(st.p.values.iter().all(|v| (v - 1.7).abs() < 1e-9));
    }

    #[test]
    fn heterogeneous_logistic_is_between_barriers() {
        let spec = MediumSpec::heterogeneous(Expr::constant(1.0), Expr::constant(0.0), Expr::cos_x(1.0, 0.5), 32);
        let (c, nl) = setup(&spec);
        let st = compute_equilibrium(&c, &nl, DEFAULT_TOL, DEFAULT_MAX_PERIODS).unwrap();
        assert!(st.positivity_floor >= 0.3);
        assert!(st.p.min() >= c.mu.min() - 1e-9 && st.p.max() <= c.mu.max() + 1e-9);
    }

    #[test]
    fn extinction_is_degeneracy() {
        let spec = MediumSpec::heterogeneous(Expr::constant(1.0), Expr::constant(0.0), Expr::constant(-1.0), 16);
        let (c, nl) = setup(&spec);
        assert!(matches!(compute_equilibrium(&c, &nl, DEFAULT_TOL, DEFAULT_MAX_PERIODS), Err(Error::Degeneracy { .. })));
    }

    #[test]
    fn probe_homogeneous_and_heterogeneous() {
        for spec in [
            MediumSpec::constant(1.0, 0.0, 16),
            MediumSpec::heterogeneous(Expr::constant(1.0), Expr::cos_t(0.2, 0.3), Expr::cos_x(1.0, 0.5), 16),
        ] {
            let (c, nl) = setup(&spec);
            let st = compute_equilibrium(&c, &nl, 1e-10, DEFAULT_MAX_PERIODS).unwrap();
            let rep = uniqueness_probe(&c, &nl, &st, 5, 1e-10, 7).unwrap();
            assert_eq!(rep.seeds.len(), 5);
            assert!(rep.max_distance < 1e-6);
        }
    }

    #[test]
    fn probe_excludes_ignition_dead_zone() {
        let spec = MediumSpec::constant(1.0, 0.0, 16)
            .with_family(Family::Ignition, ReactionParams { theta: Some(0.5), ..Default::default() });
        let (c, nl) = setup(&spec);
        let st = compute_equilibrium(&c, &nl, 1e-10, DEFAULT_MAX_PERIODS).unwrap();
        assert!((st.p.max() - 1.0).abs() < 1e-9);
        let rep = uniqueness_probe(&c, &nl, &st, 5, 1e-10, 1).unwrap();
        assert!(rep.seeds[0].excluded_lower_state);
        assert!(rep.max_distance < 1e-6);
    }

    #[test]
    fn comparison_of_marches() {
        let spec = MediumSpec::heterogeneous(Expr::cos_x(1.0, 0.3), Expr::cos_t(0.2, 0.3), Expr::cos_x(1.0, 0.5), 16);
        let (c, nl) = setup(&spec);
        let st = compute_equilibrium(&c, &nl, DEFAULT_TOL, DEFAULT_MAX_PERIODS).unwrap();
        let stepper = ImexStepper::new(&c).unwrap();
        let mut hi: Vec<f64> = st.p.row(0).iter().map(|v| 2.0 * v).collect();
        let mut lo: Vec<f64> = st.p.row(0).iter().map(|v| 0.5 * v).collect();
        for _ in 0..5 {
            for j in 0..c.grid.nt {
                stepper.step(&nl, j, &mut hi);
                stepper.step(&nl, j, &mut lo);
                assert!(hi.iter().zip(&lo).all(|(a, b)| a >= b));
            }
        }
    }

    #[test]
    fn implicit_fixed_point_is_close_to_imex_state() {
        let spec = MediumSpec::heterogeneous(Expr::constant(1.0), Expr::constant(0.2), Expr::cos_x(1.0, 0.5), 32);
        let (c, nl) = setup(&spec);
        let st = compute_equilibrium(&c, &nl, DEFAULT_TOL, DEFAULT_MAX_PERIODS).unwrap();
        let imp = implicit_fixed_point(&c, &nl, &st.p, 1e-12, 1000).unwrap();
        assert!(imp.p.max_abs_diff(&st.p) < 0.05);
        // Logistic constant medium: both schemes give exactly 1.
        let (c1, nl1) = setup(&MediumSpec::constant(1.0, 0.0, 16));
        let one = ScalarField::constant(&c1.grid, 1.0);
        let imp = implicit_fixed_point(&c1, &nl1, &one, 1e-12, 100).unwrap();
        assert!(imp.p.values.iter().all(|v| (v - 1.0).abs() < 1e-13));
    }
}
