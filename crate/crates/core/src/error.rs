use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent configuration (catalog, rate card, policy, experiment).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data that parsed but violates a domain rule.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("model {model} needs at least {required_mb} MB, got {memory_mb} MB")]
    MemoryBelowRequirement {
        model: String,
        memory_mb: u32,
        required_mb: u32,
    },

    /// No serverless memory configuration meets the latency budget.
    #[error("no serverless configuration of {model} meets {budget_ms} ms (fastest is {fastest_ms} ms)")]
    ServerlessInfeasible {
        model: String,
        budget_ms: u64,
        fastest_ms: u64,
    },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("verification error: {0}")]
    Verification(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad input rather than by a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Validation(_)
                | Error::Parse { .. }
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Io { .. }
                | Error::Comparison(_)
        )
    }
}
