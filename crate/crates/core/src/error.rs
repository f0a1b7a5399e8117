use thiserror::Error;

/// Errors raised by the solvers, the verifier and the CLI.
///
/// Messages name the operation that failed so batch logs can be traced back
/// without a backtrace.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: argument out of domain: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("{op}: invalid configuration: {detail}")]
    Config { op: &'static str, detail: String },

    #[error("simulate_paths: non-finite state on path {path} at step {step}")]
    Simulation { path: usize, step: usize },

    #[error("{op}: no convergence after {iterations} iterations (deltas: {deltas:?})")]
    NonConvergence {
        op: &'static str,
        iterations: usize,
        deltas: Vec<f64>,
    },

    #[error("{op}: non-finite value at iteration {iteration}, step {step}")]
    NonFinite {
        op: &'static str,
        iteration: usize,
        step: usize,
    },

    #[error("regression_step: design matrix rank deficient at step {step} even at degree 0")]
    RankDeficient { step: usize },

    #[error("{op}: positivity violated: {detail}")]
    Positivity { op: &'static str, detail: String },

    #[error("{op}: precondition failed: {detail}")]
    Precondition { op: &'static str, detail: String },

    #[error("{op}: nested simulation budget exhausted ({needed} inner steps needed, limit {limit})")]
    Budget { op: &'static str, needed: u64, limit: u64 },

    #[error("unknown configuration key `{key}` in section [{section}]")]
    UnknownKey { section: String, key: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Config {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn precondition(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Precondition {
            op,
            detail: detail.into(),
        }
    }

    /// True for errors caused by the user's input rather than by a solve.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::UnknownKey { .. } | Error::Domain { .. }
        )
    }
}
