use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by calibration, fitting, ingestion and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its admissible range (e.g. `alpha <= 1`).
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A formula was evaluated outside the region where it is defined.
    #[error("outside the valid domain: {0}")]
    Domain(String),

    #[error("numerical integration did not converge: {0}")]
    Convergence(String),

    #[error("no data: {0}")]
    EmptyData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("marginal constraint violated: {0}")]
    Marginal(String),

    #[error("privacy bound is not monotone in the noise variance near theta^2 = {theta_sq}: {detail}")]
    NonMonotone { theta_sq: f64, detail: String },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("secret value {0:?} matches no rows")]
    EmptySecret(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A sweep cell failed; the grid is abandoned.
    #[error("cell alpha = {alpha}, epsilon = {epsilon}, method = {method}: {source}")]
    Cell {
        alpha: f64,
        epsilon: f64,
        method: String,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 for configuration and schema problems, 1 for
    /// everything that fails while computing.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_)
            | Error::Config(_)
            | Error::EmptySecret(_)
            | Error::File { .. }
            | Error::Param(_) => 2,
            Error::Cell { source, .. } => source.exit_code(),
            Error::Csv(e) if !matches!(e.kind(), csv::ErrorKind::Io(_)) => 2,
            _ => 1,
        }
    }

    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
