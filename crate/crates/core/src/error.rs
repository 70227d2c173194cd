use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("callback `{callback}` failed at {input}: {reason}")]
    CallbackFailure {
        callback: &'static str,
        input: String,
        reason: String,
    },

    #[error("projection requires a convex domain (got a finite set)")]
    NonConvexDomain,

    #[error("implicit drift solve did not converge at t = {t} after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence {
        t: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("non-finite state on path {path} at step {step}; the explicit scheme is unstable here, try the split-step implicit scheme")]
    NonFiniteState { path: usize, step: usize },

    #[error("spike [{start}, {start}+{width}] is not aligned with the time grid (step {step})")]
    MisalignedSpike { start: f64, width: f64, step: f64 },

    #[error("moments of `{quantity}` sit below the Monte Carlo noise floor at eps = {eps} (relative stderr {rel_stderr:.3}); increase the number of paths")]
    InsufficientDecay {
        quantity: String,
        eps: f64,
        rel_stderr: f64,
    },

    #[error("implicit linear step is singular at node {node}, path {path} (condition estimate {condition:e})")]
    SingularStep {
        node: usize,
        path: usize,
        condition: f64,
    },

    #[error("regression design is rank deficient at node {node}")]
    RankDeficientBasis { node: usize },

    #[error("control derivative callbacks (D_u b, D_u sigma, D_u f) are required but missing")]
    MissingControlDerivatives,

    #[error("cost increased beyond the noise band for {consecutive} consecutive iterations (last J = {last_cost}); reduce the step size")]
    Divergence { consecutive: usize, last_cost: f64 },

    #[error("Riccati solution changed by {max_change:e} under grid refinement")]
    Stiffness { max_change: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
