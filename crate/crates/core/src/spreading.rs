//! Direct simulation on a long interval, level-set tracking and spreading
//! speed regression.
//!
//! A front moving in direction `e` has the form `phi(x e + c t, t, x)` with
//! `phi(-inf) = 0`, `phi(+inf) = p`, so its level sets travel toward `-e`.
//! Positions are therefore reported as the distance `-e x` of the invaded
//! level set.

use serde::Serialize;

use crate::dispersion::{minimal_speed, Dispersion, ZeroOrderTag};
use crate::equilibrium::{compute_equilibrium, DEFAULT_MAX_PERIODS};
use crate::error::{Error, Result};
use crate::floquet::TwistedOperator;
use crate::linalg::{ThomasFactor, Tridiagonal};
use crate::medium::{evaluate_eta, CoefficientSet, Nonlinearity, ScalarField};

/// Fraction of the trace discarded as initial transient.
pub const DEFAULT_DISCARD: f64 = 1.0 / 3.0;
/// Fraction of the local `p` defining the tracked level set.
pub const DEFAULT_LEVEL: f64 = 0.5;
/// Minimum number of regression points.
pub const MIN_POINTS: usize = 10;

/// Nodes `x_n = -X + n dx`, `n = 0..=n_line`, with `X` a multiple of the period
/// so that node `n` sits on torus column `n mod nx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineGrid {
    pub half_width: f64,
    pub n_line: usize,
    pub dx_line: f64,
    #[serde(skip)]
    pub nx: usize,
}

impl LineGrid {
    /// Smallest admissible grid with `X >= min_half_width`, `X >= 20 L`.
    pub fn new(coeffs: &CoefficientSet, min_half_width: f64) -> Result<Self> {
        let g = coeffs.grid;
        if !(min_half_width >= 0.0) || !min_half_width.is_finite() {
            return Err(Error::Config(format!("line half-width must be finite, got {min_half_width}")));
        }
        let cells = (min_half_width.max(20.0 * g.x_period) / g.x_period).ceil() as usize;
        let half_width = cells as f64 * g.x_period;
        Ok(Self { half_width, n_line: 2 * cells * g.nx, dx_line: g.dx(), nx: g.nx })
    }

    pub fn x_at(&self, n: usize) -> f64 {
        -self.half_width + n as f64 * self.dx_line
    }

    pub fn column(&self, n: usize) -> usize {
        n % self.nx
    }
}

/// Initial datum shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDatum {
    /// `p` where `x e >= 0`, 0 elsewhere.
    Step,
    /// `p` on `|x| <= half_width`, 0 elsewhere.
    Bump { half_width: f64 },
    /// `p min(1, e^{lambda0 x e})`.
    ExpTail { lambda0: f64 },
}

impl std::str::FromStr for InitialDatum {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(Self::Step),
            "bump" => Ok(Self::Bump { half_width: 2.0 }),
            _ => match s.strip_prefix("exp:").map(str::parse::<f64>) {
                Some(Ok(l)) if l > 0.0 && l.is_finite() => Ok(Self::ExpTail { lambda0: l }),
                _ => Err(Error::Config(format!("initial datum must be step, bump or exp:<lambda0 > 0>, got {s}"))),
            },
        }
    }
}

impl InitialDatum {
    pub fn sample(&self, line: &LineGrid, p0: &[f64], direction: f64) -> Vec<f64> {
        (0..=line.n_line)
            .map(|n| {
                let x = line.x_at(n);
                let pv = p0[line.column(n)];
                let v = match *self {
                    InitialDatum::Step => {
                        if x * direction >= 0.0 {
                            pv
                        } else {
                            0.0
                        }
                    }
                    InitialDatum::Bump { half_width } => {
                        if x.abs() <= half_width {
                            pv
                        } else {
                            0.0
                        }
                    }
                    InitialDatum::ExpTail { lambda0 } => pv * (lambda0 * x * direction).exp().min(1.0),
                };
                if n == 0 || n == line.n_line {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    }
}

/// State at `t = period * T`.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub period: usize,
    pub time: f64,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Snapshots {
    pub line: LineGrid,
    pub direction: f64,
    pub snaps: Vec<Snapshot>,
}

/// IMEX stepper on the line: `(I + dt M_{j+1}) u^{j+1} = u^j + dt f(t_j, u^j)`,
/// homogeneous Dirichlet data at `x = +-X`.
#[derive(Debug, Clone)]
pub struct LineStepper {
    pub line: LineGrid,
    factors: Vec<ThomasFactor>,
    factor_of_level: Vec<usize>,
    nt: usize,
    dt: f64,
}

impl LineStepper {
    pub fn new(coeffs: &CoefficientSet, line: LineGrid) -> Result<Self> {
        let g = coeffs.grid;
        let op = TwistedOperator::new(coeffs, &coeffs.mu, 0.0, 1.0)?;
        let dt = g.dt();
        let n_int = line.n_line - 1;
        let mut rows: Vec<Tridiagonal> = Vec::new();
        let mut factors = Vec::new();
        let mut factor_of_level = Vec::with_capacity(g.nt);
        for j in 0..g.nt {
            let m = op.transport(j);
            if let Some(pos) = rows.iter().position(|r| *r == m) {
                factor_of_level.push(pos);
                continue;
            }
            let mut sys = Tridiagonal::zeros(n_int);
            for r in 0..n_int {
                let i = line.column(r + 1);
                sys.lower[r] = if r == 0 { 0.0 } else { dt * m.lower[i] };
                sys.diag[r] = 1.0 + dt * m.diag[i];
                sys.upper[r] = if r + 1 == n_int { 0.0 } else { dt * m.upper[i] };
            }
            factors.push(ThomasFactor::new(&sys)?);
            rows.push(m);
            factor_of_level.push(factors.len() - 1);
        }
        Ok(Self { line, factors, factor_of_level, nt: g.nt, dt })
    }

    /// Advances `u` (all nodes, ends held at 0) from level `j` to `j + 1`.
    pub fn step(&self, nl: &Nonlinearity, j: usize, u: &mut [f64]) {
        let n = self.line.n_line;
        let inner = &mut u[1..n];
        for (r, v) in inner.iter_mut().enumerate() {
            *v += self.dt * nl.eval(j, self.line.column(r + 1), *v);
        }
        self.factors[self.factor_of_level[(j + 1) % self.nt]].solve_in_place(inner);
    }
}

/// Marches `u0` for `t_end_periods` periods, recording a snapshot every
/// `snapshot_every` periods (including `t = 0`).
///
/// Fails with a containment error when the tracked level set of the last
/// snapshot comes within `5 L` of either end.
#[allow(clippy::too_many_arguments)]
pub fn evolve_line(
    coeffs: &CoefficientSet,
    nl: &Nonlinearity,
    p: &ScalarField,
    u0: &[f64],
    line: LineGrid,
    direction: f64,
    t_end_periods: usize,
    snapshot_every: usize,
) -> Result<Snapshots> {
    if u0.len() != line.n_line + 1 {
        return Err(Error::Config(format!("initial datum has {} values, line has {}", u0.len(), line.n_line + 1)));
    }
    if snapshot_every == 0 {
        return Err(Error::Config("snapshot interval must be at least one period".into()));
    }
    let pmax = p.max();
    if u0.iter().any(|&v| !(v >= 0.0 && v <= pmax * (1.0 + 1e-12))) {
        return Err(Error::Config("initial datum must lie in [0, max p]".into()));
    }
    let stepper = LineStepper::new(coeffs, line)?;
    let g = coeffs.grid;
    let mut u = u0.to_vec();
    u[0] = 0.0;
    u[line.n_line] = 0.0;
    let mut snaps = vec![Snapshot { period: 0, time: 0.0, u: u.clone() }];
    for period in 1..=t_end_periods {
        for j in 0..g.nt {
            stepper.step(nl, j, &mut u);
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("line state not finite after {period} periods")));
        }
        if period % snapshot_every == 0 || period == t_end_periods {
            snaps.push(Snapshot { period, time: period as f64 * g.t_period, u: u.clone() });
        }
    }
    let out = Snapshots { line, direction, snaps };
    check_containment(&out, p, g.x_period)?;
    Ok(out)
}

fn check_containment(s: &Snapshots, p: &ScalarField, period: f64) -> Result<()> {
    let line = s.line;
    let last = match s.snaps.last() {
        Some(l) => l,
        None => return Ok(()),
    };
    if let Some(pos) = crossing(&last.u, p, &line, s.direction, DEFAULT_LEVEL) {
        let x = -s.direction * pos;
        let distance = line.half_width - x.abs();
        if distance < 5.0 * period {
            return Err(Error::Containment { distance, required: 5.0 * period });
        }
    }
    Ok(())
}

/// Tracked level-set positions.
#[derive(Debug, Clone, Serialize)]
pub struct SpreadingTrace {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub level: f64,
    /// Snapshot times with no crossing.
    pub dropped: Vec<f64>,
}

/// Largest `-e x` with `u >= level p`, by linear interpolation of
/// `u - level p` between the crossing nodes.
fn crossing(u: &[f64], p: &ScalarField, line: &LineGrid, direction: f64, level: f64) -> Option<f64> {
    let n = line.n_line;
    let g = |m: usize| u[m] - level * p.get(0, line.column(m));
    // Walk from the far end in direction -e toward +e.
    let order: Box<dyn Iterator<Item = usize>> = if direction > 0.0 { Box::new(0..=n) } else { Box::new((0..=n).rev()) };
    let mut prev: Option<usize> = None;
    for m in order {
        if g(m) >= 0.0 {
            let x = match prev {
                None => line.x_at(m),
                Some(pm) => {
                    let (g0, g1) = (g(pm), g(m));
                    let w = g0 / (g0 - g1);
                    line.x_at(pm) + w * (line.x_at(m) - line.x_at(pm))
                }
            };
            return Some(-direction * x);
        }
        prev = Some(m);
    }
    None
}

/// Level-set positions of all snapshots against `level * p(0, x)`.
pub fn track_front(snapshots: &Snapshots, p: &ScalarField, level: f64) -> Result<SpreadingTrace> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("tracking level must lie in (0, 1), got {level}")));
    }
    if snapshots.snaps.is_empty() {
        return Err(Error::Config("no snapshots to track".into()));
    }
    let mut trace = SpreadingTrace { times: vec![], positions: vec![], level, dropped: vec![] };
    for s in &snapshots.snaps {
        match crossing(&s.u, p, &snapshots.line, snapshots.direction, level) {
            Some(x) => {
                trace.times.push(s.time);
                trace.positions.push(x);
            }
            None => trace.dropped.push(s.time),
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpeedEstimate {
    pub c_hat: f64,
    pub stderr: f64,
    pub n_points: usize,
}

/// Least-squares slope of position against time after discarding the
/// leading `discard_fraction` of the trace.
pub fn estimate_speed(trace: &SpreadingTrace, discard_fraction: f64) -> Result<SpeedEstimate> {
    if !(0.0..1.0).contains(&discard_fraction) {
        return Err(Error::Config(format!("discard fraction must lie in [0, 1), got {discard_fraction}")));
    }
    let n_all = trace.times.len();
    let skip = (discard_fraction * n_all as f64).floor() as usize;
    let (ts, xs) = (&trace.times[skip..], &trace.positions[skip..]);
    let n = ts.len();
    if n < MIN_POINTS {
        return Err(Error::InsufficientData { have: n, need: MIN_POINTS });
    }
    let nf = n as f64;
    let mt = ts.iter().sum::<f64>() / nf;
    let mx = xs.iter().sum::<f64>() / nf;
    let stt: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    let stx: f64 = ts.iter().zip(xs).map(|(t, x)| (t - mt) * (x - mx)).sum();
    let c_hat = stx / stt;
    let ssr: f64 = ts.iter().zip(xs).map(|(t, x)| (x - mx - c_hat * (t - mt)).powi(2)).sum();
    let stderr = (ssr / (nf - 2.0) / stt).sqrt();
    Ok(SpeedEstimate { c_hat, stderr, n_points: n })
}

#[derive(Debug, Clone, Copy)]
pub struct SpreadOptions {
    pub t_end_periods: usize,
    pub level: f64,
    pub discard_fraction: f64,
    /// Relative tolerance of the speed checks.
    pub tol: f64,
    /// Frame speed `below_factor * c*(mu)` for the invasion check.
    pub below_factor: f64,
    /// Frame speed `above_factor * c*(eta)` for the extinction check.
    pub above_factor: f64,
    /// Window length (in periods `L`) of the frame checks.
    pub window_cells: f64,
    /// Sup-norm threshold of the frame checks.
    pub frame_tol: f64,
}

impl Default for SpreadOptions {
    fn default() -> Self {
        Self {
            t_end_periods: 40,
            level: DEFAULT_LEVEL,
            discard_fraction: DEFAULT_DISCARD,
            tol: 0.05,
            below_factor: 0.7,
            above_factor: 1.1,
            window_cells: 2.0,
            frame_tol: 1e-2,
        }
    }
}

/// Outcome of a spreading run against the speed bounds.
#[derive(Debug, Clone, Serialize)]
pub struct SpreadingAudit {
    pub direction: f64,
    pub c_star_mu: f64,
    pub c_star_eta: f64,
    /// Minimal speed in the opposite direction (bounds the frame-check range).
    pub c_star_opposite: f64,
    pub c_hat: f64,
    pub stderr: f64,
    pub sandwich_ok: bool,
    pub kpp: bool,
    /// `|c_hat - c*(mu)| <= tol c*(mu)`; only for KPP reactions.
    pub kpp_equality_ok: Option<bool>,
    pub below_frame_speed: f64,
    /// `sup |u - p|` on the window behind the slow frame; `None` when the
    /// frame speed is outside `(-c*_{-e}, c*_e)`.
    pub below_distance: Option<f64>,
    pub below_ok: bool,
    pub above_frame_speed: f64,
    /// `sup u` on the window ahead of the fast frame.
    pub above_sup: f64,
    pub above_ok: bool,
    pub trace: SpreadingTrace,
}

impl SpreadingAudit {
    pub fn passed(&self) -> bool {
        self.sandwich_ok && self.kpp_equality_ok.unwrap_or(true) && self.below_ok && self.above_ok
    }
}

/// Runs the step datum and audits the speed sandwich, the KPP equality and
/// the moving-frame limits.
pub fn spreading_audit(
    coeffs: &CoefficientSet,
    nl: &Nonlinearity,
    direction: f64,
    opts: &SpreadOptions,
) -> Result<SpreadingAudit> {
    let g = coeffs.grid;
    let p = compute_equilibrium(coeffs, nl, 1e-10, DEFAULT_MAX_PERIODS)?.p;
    let eta = evaluate_eta(nl, &p, &g, 256)?;
    let mu_speed = minimal_speed(&Dispersion::new(coeffs, &coeffs.mu, direction), ZeroOrderTag::Mu, 0.0)?.c_star;
    let eta_speed = minimal_speed(&Dispersion::new(coeffs, &eta, direction), ZeroOrderTag::Eta, 0.0)?.c_star;
    let opposite = minimal_speed(&Dispersion::new(coeffs, &coeffs.mu, -direction), ZeroOrderTag::Mu, 0.0)?.c_star;

    let t_end = opts.t_end_periods as f64 * g.t_period;
    let x_min = (mu_speed.abs().max(eta_speed.abs()) + 2.0) * t_end;
    let line = LineGrid::new(coeffs, x_min)?;
    let u0 = InitialDatum::Step.sample(&line, p.row(0), direction);
    let snaps = evolve_line(coeffs, nl, &p, &u0, line, direction, opts.t_end_periods, 1)?;
    let trace = track_front(&snaps, &p, opts.level)?;
    let est = estimate_speed(&trace, opts.discard_fraction)?;

    let sandwich_ok = est.c_hat >= mu_speed * (1.0 - opts.tol) && est.c_hat <= eta_speed * (1.0 + opts.tol);
    let kpp_equality_ok = nl.kpp_flag.then(|| (est.c_hat - mu_speed).abs() <= opts.tol * mu_speed.abs());

    let last = snaps.snaps.last().expect("at least the initial snapshot");
    let w = opts.window_cells * g.x_period;
    // Distances -e x relative to the origin of the step.
    let dist = |n: usize| -direction * line.x_at(n);
    let below_speed = opts.below_factor * mu_speed;
    let below_distance = (below_speed > -opposite && below_speed < mu_speed).then(|| {
        let y = below_speed * last.time;
        (0..=line.n_line)
            .filter(|&n| (y - w..=y).contains(&dist(n)))
            .map(|n| (last.u[n] - p.get(0, line.column(n))).abs())
            .fold(0.0f64, f64::max)
    });
    let above_speed = opts.above_factor * eta_speed;
    let y = above_speed * last.time;
    let above_sup = (0..=line.n_line)
        .filter(|&n| (y..=y + w).contains(&dist(n)))
        .map(|n| last.u[n])
        .fold(0.0f64, f64::max);
    Ok(SpreadingAudit {
        direction,
        c_star_mu: mu_speed,
        c_star_eta: eta_speed,
        c_star_opposite: opposite,
        c_hat: est.c_hat,
        stderr: est.stderr,
        sandwich_ok,
        kpp: nl.kpp_flag,
        kpp_equality_ok,
        below_frame_speed: below_speed,
        below_ok: below_distance.is_none_or(|d| d <= opts.frame_tol),
        below_distance,
        above_frame_speed: above_speed,
        above_ok: above_sup <= opts.frame_tol,
        above_sup,
        trace,
    })
}
