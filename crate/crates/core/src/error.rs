use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("ordering error: timestamps not strictly increasing at row {row}")]
    Ordering { row: usize },

    #[error("unparseable timestamps at rows {0:?}")]
    Timestamp(Vec<usize>),

    #[error("arity error: {0}")]
    Arity(String),

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("invalid quantile levels: {0}")]
    QuantileLevels(String),

    #[error("underdetermined problem: {rows} rows for {cols} coefficients")]
    Underdetermined { rows: usize, cols: usize },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("pivot limit of {0} reached")]
    PivotLimit(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("quantile {tau}: {source}")]
    Tau {
        tau: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("training error at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad input or configuration rather than a
    /// failure while running. The CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Schema(_)
            | Error::Ordering { .. }
            | Error::Timestamp(_)
            | Error::Arity(_)
            | Error::QuantileLevels(_)
            | Error::Underdetermined { .. }
            | Error::Config(_)
            | Error::Parameter(_)
            | Error::Toml(_) => true,
            Error::Tau { source, .. } | Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
