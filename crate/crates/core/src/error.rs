use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate user_id {0:?}")]
    DuplicateUser(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("no token satisfies the vocabulary constraints (min_users={min_users}, max_frac={max_frac})")]
    EmptyVocabulary { min_users: usize, max_frac: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("feature space mismatch: model built on {expected}, features built on {found}")]
    FeatureSpaceMismatch { expected: String, found: String },

    #[error("singular system: {0}; use lambda > 0")]
    RankDeficient(String),

    #[error("degenerate leverage {leverage} at row {row}")]
    DegenerateLeverage { row: usize, leverage: f64 },

    #[error("coordinate descent did not converge after {sweeps} sweeps (duality gap {duality_gap:e})")]
    NoConvergence { sweeps: usize, duality_gap: f64 },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::DuplicateUser(_)
            | Error::Data(_)
            | Error::EmptyVocabulary { .. }
            | Error::DimensionMismatch { .. }
            | Error::FeatureSpaceMismatch { .. }
            | Error::Json(_) => 3,
            Error::RankDeficient(_)
            | Error::DegenerateLeverage { .. }
            | Error::NoConvergence { .. } => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
