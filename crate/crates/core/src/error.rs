use thiserror::Error;

/// Every failure the library can report.
///
/// Numerical variants carry the offending quantity so that callers (and the
/// CLI) can print something actionable.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("ellipticity error: diffusion coefficient {value} <= 0 at node (t={t_index}, x={x_index})")]
    Ellipticity {
        value: f64,
        t_index: usize,
        x_index: usize,
    },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("power iteration did not converge after {iters} iterations (last ratio gap {gap:.3e})")]
    Iteration { iters: usize, gap: f64 },

    #[error("scheme positivity lost: iterate has min value {min_value:.3e}")]
    Positivity { min_value: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition error: {0}")]
    Precondition(String),

    #[error("degeneracy error: iterate reached {min_value:.3e} after {periods} periods (zero state appears stable)")]
    Degeneracy { min_value: f64, periods: usize },

    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error("scheme error: {0}")]
    Scheme(String),

    #[error("containment error: front at distance {distance:.3} from the boundary (need >= {required:.3}); enlarge the line")]
    Containment { distance: f64, required: f64 },

    #[error("insufficient data: {have} points after discarding the transient (need >= {need})")]
    InsufficientData { have: usize, need: usize },

    #[error("uniqueness violation: seed {seed} ended at distance {distance:.3e} from p")]
    UniquenessViolation { seed: usize, distance: f64 },

    #[error("audit failure: {0}")]
    Audit(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Ellipticity { .. } | Error::Precondition(_) => 2,
            Error::Audit(_) | Error::UniquenessViolation { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
