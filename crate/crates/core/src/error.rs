use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// The CLI maps these onto process exit codes through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("logistic regression did not converge after {iterations} iterations (last change {last_change:e})")]
    Convergence {
        iterations: usize,
        last_change: f64,
        coefficients: Vec<f64>,
    },

    #[error(
        "perfect separation detected at iteration {iteration}: |coefficient| exceeded {bound}"
    )]
    Separation { iteration: usize, bound: f64 },

    #[error("linear algebra error: {0}")]
    LinearAlgebra(String),

    #[error("test error: {0}")]
    Test(String),

    #[error("selection rule error: {0}")]
    Rule(String),

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("replicate {index}: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::Ingest(_) | Error::Rule(_) | Error::Io(_) => 3,
            Error::Replicate { source, .. } => source.exit_code(),
            _ => 4,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
