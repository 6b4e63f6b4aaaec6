//! Command-line dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::audit::run_audit;
use crate::dispersion::{decay_roots, minimal_speed, scan_dispersion, Dispersion, ZeroOrderTag, EIGEN_TOL};
use crate::equilibrium::{compute_equilibrium, DEFAULT_MAX_PERIODS, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::floquet::{principal_eigenpair, TwistedOperator, DEFAULT_MAX_ITERS};
use crate::front::{monotone_iteration, profile_diagnostics, FrontContext, FrontOptions, FrontPath};
use crate::medium::{evaluate_eta, Medium, MediumSpec, ScalarField};
use crate::output::{fmt_f64, write_outputs, RunManifest, Table};
use crate::spreading::{
    estimate_speed, evolve_line, spreading_audit, track_front, InitialDatum, LineGrid, SpreadOptions,
    DEFAULT_DISCARD, DEFAULT_LEVEL,
};

#[derive(Debug, Parser)]
#[command(name = "pulsefront", version, about = "Pulsating fronts in space-time periodic media")]
pub struct Cli {
    /// Medium description (TOML); defaults to the constant logistic medium.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "pulsefront-out")]
    pub out: PathBuf,
    /// Seed of the randomized probes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Halves dt, dx and dz this many times.
    #[arg(long, global = true, default_value_t = 0)]
    pub refine: u32,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroOrder {
    Mu,
    Eta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PathArg {
    Kpp,
    General,
}

#[derive(Debug, Args, Serialize)]
pub struct EigenArgs {
    /// Twist exponent.
    #[arg(long)]
    pub lambda: f64,
    /// Zero-order term of the linearization.
    #[arg(long, value_enum, default_value_t = ZeroOrder::Mu)]
    pub zero_order: ZeroOrder,
}

#[derive(Debug, Args, Serialize)]
pub struct DispersionArgs {
    /// Largest lambda sampled.
    #[arg(long, default_value_t = 4.0)]
    pub lmax: f64,
    /// Number of samples.
    #[arg(long, default_value_t = 33)]
    pub n: usize,
    /// Zero-order term of the linearization.
    #[arg(long, value_enum, default_value_t = ZeroOrder::Mu)]
    pub zero_order: ZeroOrder,
    /// Viscosity added in the moving coordinate.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SpeedArgs {
    /// Zero-order term of the linearization.
    #[arg(long, value_enum, default_value_t = ZeroOrder::Mu)]
    pub zero_order: ZeroOrder,
    /// Viscosity added in the moving coordinate.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct RootsArgs {
    /// Front speed.
    #[arg(long)]
    pub c: f64,
    /// Viscosity added in the moving coordinate.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Zero-order term of the linearization.
    #[arg(long, value_enum, default_value_t = ZeroOrder::Mu)]
    pub zero_order: ZeroOrder,
}

#[derive(Debug, Args, Serialize)]
pub struct FrontArgs {
    /// Front speed.
    #[arg(long)]
    pub c: f64,
    /// Viscosity added in the moving coordinate.
    #[arg(long)]
    pub eps: f64,
    /// Cylinder half-length.
    #[arg(long, default_value_t = 15.0)]
    pub a: f64,
    /// Barrier construction.
    #[arg(long, value_enum, default_value_t = PathArg::Kpp)]
    pub path: PathArg,
    /// Write only the JSON summary.
    #[arg(long)]
    pub no_field: bool,
    /// Restrict the field dump to one time level.
    #[arg(long)]
    pub t_index: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SpreadArgs {
    /// step, bump or exp:<lambda0>.
    #[arg(long, default_value = "step")]
    pub u0: String,
    /// Number of periods to simulate.
    #[arg(long, default_value_t = 40)]
    pub t_end: usize,
    /// Tracked fraction of the periodic state.
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    pub level: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Principal eigenvalue of the twisted operator.
    Eigen(EigenArgs),
    /// Dispersion curve lambda -> k.
    Dispersion(DispersionArgs),
    /// Minimal front speed.
    Speed(SpeedArgs),
    /// Decay exponents at a supercritical speed.
    Roots(RootsArgs),
    /// Positive periodic state p.
    Equilibrium,
    /// Front profile on a finite cylinder.
    Front(FrontArgs),
    /// Direct simulation and spreading speed.
    Spread(SpreadArgs),
    /// Full pass/fail audit.
    Audit,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Eigen(_) => "eigen",
            Command::Dispersion(_) => "dispersion",
            Command::Speed(_) => "speed",
            Command::Roots(_) => "roots",
            Command::Equilibrium => "equilibrium",
            Command::Front(_) => "front",
            Command::Spread(_) => "spread",
            Command::Audit => "audit",
        }
    }

    fn options(&self) -> serde_json::Value {
        let v = match self {
            Command::Eigen(a) => serde_json::to_value(a),
            Command::Dispersion(a) => serde_json::to_value(a),
            Command::Speed(a) => serde_json::to_value(a),
            Command::Roots(a) => serde_json::to_value(a),
            Command::Front(a) => serde_json::to_value(a),
            Command::Spread(a) => serde_json::to_value(a),
            Command::Equilibrium | Command::Audit => Ok(json!({})),
        };
        v.unwrap_or(serde_json::Value::Null)
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Prints a line to stdout; a closed pipe is not an error.
fn emit(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn load_spec(config: Option<&Path>, refine: u32) -> Result<MediumSpec> {
    let spec = match config {
        Some(p) => MediumSpec::from_path(p)?,
        None => MediumSpec::default(),
    };
    Ok(spec.refined(refine))
}

fn zero_order_field(m: &Medium, which: ZeroOrder) -> Result<(ScalarField, ZeroOrderTag)> {
    match which {
        ZeroOrder::Mu => Ok((m.coeffs.mu.clone(), ZeroOrderTag::Mu)),
        ZeroOrder::Eta => {
            let p = compute_equilibrium(&m.coeffs, &m.nl, DEFAULT_TOL, DEFAULT_MAX_PERIODS)?.p;
            Ok((evaluate_eta(&m.nl, &p, &m.grid, 256)?, ZeroOrderTag::Eta))
        }
    }
}

/// Runs a parsed command; returns 0, or 4 when an audit fails.
pub fn run(cli: &Cli) -> Result<i32> {
    let spec = load_spec(cli.config.as_deref(), cli.refine)?;
    let m = Medium::from_spec(&spec)?;
    let params = json!({
        "medium": serde_json::to_value(&spec).map_err(|e| Error::Config(e.to_string()))?,
        "options": cli.command.options(),
    });
    let manifest = RunManifest::new(cli.config.as_deref(), cli.command.name(), params, cli.seed, cli.refine);
    let out = cli.out.as_path();
    let e = m.direction;
    let mut code = 0;
    let summary = match &cli.command {
        Command::Eigen(a) => {
            let (z, _) = zero_order_field(&m, a.zero_order)?;
            let op = TwistedOperator::new(&m.coeffs, &z, a.lambda, e)?;
            let ep = principal_eigenpair(&op, EIGEN_TOL, DEFAULT_MAX_ITERS)?;
            let mut t = Table::new(&["t_index", "x_index", "psi"]);
            for j in 0..m.grid.nt {
                for i in 0..m.grid.nx {
                    t.push(vec![j.to_string(), i.to_string(), fmt_f64(ep.psi.get(j, i))]);
                }
            }
            let s = json!({"lambda": a.lambda, "k": ep.k, "residual": ep.residual, "iters": ep.iters});
            write_outputs(out, &manifest, &s, &[("psi", t)])?;
            s
        }
        Command::Dispersion(a) => {
            let (z, tag) = zero_order_field(&m, a.zero_order)?;
            let curve = scan_dispersion(&Dispersion::new(&m.coeffs, &z, e), tag, a.eps, a.lmax, a.n)?;
            let mut t = Table::new(&["lambda", "k"]);
            for (l, k) in curve.lambdas.iter().zip(&curve.ks) {
                t.push(vec![fmt_f64(*l), fmt_f64(*k)]);
            }
            let s = json!({
                "concave": curve.concave,
                "concavity_violation": curve.concavity_violation,
                "bounds_ok": curve.bounds_ok,
                "bound_violation": curve.bound_violation,
            });
            write_outputs(out, &manifest, &s, &[("dispersion", t)])?;
            s
        }
        Command::Speed(a) => {
            let (z, tag) = zero_order_field(&m, a.zero_order)?;
            let r = minimal_speed(&Dispersion::new(&m.coeffs, &z, e), tag, a.eps)?;
            let s = json!({"c_star": r.c_star, "lambda_star": r.lambda_star, "eps": r.eps, "residual": r.residual});
            write_outputs(out, &manifest, &s, &[])?;
            s
        }
        Command::Roots(a) => {
            let (z, tag) = zero_order_field(&m, a.zero_order)?;
            let r = decay_roots(&Dispersion::new(&m.coeffs, &z, e), tag, a.eps, a.c)?;
            let s = json!({"c": r.c, "lam": r.lam, "Lam": r.big_lam, "residual": r.residual});
            write_outputs(out, &manifest, &s, &[])?;
            s
        }
        Command::Equilibrium => {
            let st = compute_equilibrium(&m.coeffs, &m.nl, DEFAULT_TOL, DEFAULT_MAX_PERIODS)?;
            let mut t = Table::new(&["t_index", "x_index", "p"]);
            for j in 0..m.grid.nt {
                for i in 0..m.grid.nx {
                    t.push(vec![j.to_string(), i.to_string(), fmt_f64(st.p.get(j, i))]);
                }
            }
            let s = json!({"residual": st.residual, "min_p": st.p.min(), "max_p": st.p.max(), "periods": st.periods});
            write_outputs(out, &manifest, &s, &[("p", t)])?;
            s
        }
        Command::Front(a) => {
            let path = match a.path {
                PathArg::Kpp => FrontPath::Kpp,
                PathArg::General => FrontPath::General,
            };
            let ctx = FrontContext::from_medium(&m)?;
            let prof = monotone_iteration(&ctx, a.c, a.eps, a.a, path, &FrontOptions::default())?;
            let roots = decay_roots(&Dispersion::new(&m.coeffs, &m.coeffs.mu, e), ZeroOrderTag::Mu, a.eps, a.c)?;
            let rep = profile_diagnostics(&prof, &roots);
            let s = json!({
                "iters": prof.iters,
                "monotone_defect": prof.monotone_defect,
                "outer_defect": prof.outer_defect,
                "sandwich_defect": prof.sandwich_defect,
                "sandwich_ok": prof.sandwich_ok(0.0),
                "tail_slope": rep.tail_slope,
                "z_scheme": prof.z_scheme,
                "tau": prof.tau,
                "diagnostics": rep,
            });
            let mut tables = Vec::new();
            if !a.no_field {
                let g = prof.grid;
                if let Some(j) = a.t_index.filter(|&j| j >= g.base.nt) {
                    return Err(Error::Config(format!("t-index {j} outside 0..{}", g.base.nt)));
                }
                let mut t = Table::new(&["z_index", "t_index", "x_index", "phi"]);
                for k in 0..=g.nz {
                    for j in 0..g.base.nt {
                        if a.t_index.is_some_and(|s| s != j) {
                            continue;
                        }
                        for i in 0..g.base.nx {
                            t.push(vec![k.to_string(), j.to_string(), i.to_string(), fmt_f64(prof.phi.get(k, j, i))]);
                        }
                    }
                }
                tables.push(("phi", t));
            }
            write_outputs(out, &manifest, &s, &tables)?;
            s
        }
        Command::Spread(a) => {
            let datum: InitialDatum = a.u0.parse()?;
            let opts = SpreadOptions { t_end_periods: a.t_end, level: a.level, ..Default::default() };
            let audit = spreading_audit(&m.coeffs, &m.nl, e, &opts)?;
            let (trace, est) = if datum == InitialDatum::Step {
                let est = estimate_speed(&audit.trace, DEFAULT_DISCARD)?;
                (audit.trace.clone(), est)
            } else {
                let p = compute_equilibrium(&m.coeffs, &m.nl, 1e-10, DEFAULT_MAX_PERIODS)?.p;
                let t_end = a.t_end as f64 * m.grid.t_period;
                let line = LineGrid::new(&m.coeffs, (audit.c_star_mu.abs().max(audit.c_star_eta.abs()) + 2.0) * t_end)?;
                let u0 = datum.sample(&line, p.row(0), e);
                let snaps = evolve_line(&m.coeffs, &m.nl, &p, &u0, line, e, a.t_end, 1)?;
                let trace = track_front(&snaps, &p, a.level)?;
                let est = estimate_speed(&trace, DEFAULT_DISCARD)?;
                (trace, est)
            };
            let mut t = Table::new(&["t", "x_front"]);
            for (ti, x) in trace.times.iter().zip(&trace.positions) {
                t.push(vec![fmt_f64(*ti), fmt_f64(*x)]);
            }
            let s = json!({
                "c_hat": est.c_hat,
                "stderr": est.stderr,
                "sandwich": if audit.sandwich_ok { "pass" } else { "fail" },
                "c_star_mu": audit.c_star_mu,
                "c_star_eta": audit.c_star_eta,
                "kpp_equality_ok": audit.kpp_equality_ok,
                "below_frame_distance": audit.below_distance,
                "above_frame_sup": audit.above_sup,
                "audit_passed": audit.passed(),
                "dropped_times": trace.dropped,
            });
            write_outputs(out, &manifest, &s, &[("front", t)])?;
            s
        }
        Command::Audit => {
            let rep = run_audit(cli.seed);
            for r in &rep.rows {
                emit(&r.line());
            }
            write_outputs(out, &manifest, &rep, &[("audit", rep.table())])?;
            if !rep.passed {
                code = 4;
            }
            return Ok(code);
        }
    };
    emit(&serde_json::to_string_pretty(&summary).map_err(|e| Error::Numerical(e.to_string()))?);
    Ok(code)
}
