use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// Variants are grouped by the exit code the CLI maps them to, see
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter set: {0}")]
    InvalidParams(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "integration blow-up: {component} = {value:e} at t = {time} (step h = {step}); \
         try a smaller step"
    )]
    IntegrationBlowup {
        component: &'static str,
        value: f64,
        time: f64,
        step: f64,
    },

    #[error("no endemic equilibrium: Re = {re} < 1")]
    NoEndemicEquilibrium { re: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error(
        "forward-backward sweep diverged at iteration {iteration} (J = {objective}, best {best}); \
         try a smaller relaxation omega"
    )]
    SweepDivergence {
        iteration: usize,
        objective: f64,
        best: f64,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for numeric failures, 4 for IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::InvalidParams(_) | Error::Config(_) | Error::Json(_) => 2,
            Error::IntegrationBlowup { .. }
            | Error::NoEndemicEquilibrium { .. }
            | Error::NonConvergence { .. }
            | Error::SweepDivergence { .. }
            | Error::Degenerate(_)
            | Error::Numeric(_) => 3,
            Error::Io { .. } | Error::Csv(_) => 4,
        }
    }

    /// Short machine-readable category used in structured CLI output.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "numeric",
            _ => "io",
        }
    }
}
