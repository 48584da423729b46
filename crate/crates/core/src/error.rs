use thiserror::Error;

/// Errors raised by the model, equilibrium and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}` (violates {hypothesis}): {reason}")]
    InvalidParameter {
        name: &'static str,
        hypothesis: &'static str,
        reason: String,
    },

    #[error("degenerate equilibrium: beta*K_d + gamma*K_r vanishes at theta_bar={theta_bar}, any c is stationary")]
    DegenerateEquilibrium { theta_bar: f64 },

    #[error("no equilibrium phase root in [0,1]; real roots of the cubic: {real_roots:?}")]
    RootNotFound { real_roots: Vec<f64> },

    #[error("positivity lost: theta={value} at cell {cell}, t={t}")]
    PositivityLoss { cell: usize, t: f64, value: f64 },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("time step {dt} exceeds the monotonicity bound {limit}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("decay fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Step index attached by `run`, if any.
    pub fn step(&self) -> Option<usize> {
        match self {
            Error::AtStep { step, .. } => Some(*step),
            _ => None,
        }
    }
}
