use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] selbounds::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    /// Bad cell or header in an input table.
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    /// Schema violation in a configuration file; `path` is the offending field.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 for invalid input, 3 for an infeasible denominator, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use selbounds::Error as E;
        match self {
            CliError::Core(E::DenominatorInfeasible { .. }) => 3,
            CliError::Core(
                E::DegenerateDesign(_) | E::NoTruth(_) | E::TooManyFailures { .. },
            ) => 1,
            CliError::Core(_) | CliError::Parse { .. } | CliError::Config { .. } | CliError::Invalid(_) => 2,
            CliError::Io { .. } | CliError::Csv { .. } | CliError::Json(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
