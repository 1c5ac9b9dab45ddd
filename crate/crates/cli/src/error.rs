use thiserror::Error;

use crate::config::ConfigError;

/// Exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const PARSE: i32 = 2;
    pub const RESOURCE: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
    pub const COMPARISON: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{key} = {value:?}: {source}")]
    Spec {
        key: &'static str,
        value: String,
        source: qnnlv_core::Error,
    },
    #[error("missing setting `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Core(#[from] qnnlv_core::Error),
    #[error("{count} trajectory(ies) diverged; partial outputs kept in {dir}")]
    Diverged { count: usize, dir: String },
    #[error("{count} trajectory(ies) failed; see summary.json")]
    SamplesFailed { count: usize },
    #[error("{failed} of {total} comparison(s) outside tolerance")]
    ComparisonFailed { failed: usize, total: usize },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use qnnlv_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Spec { .. } | CliError::Missing(_) => exit::PARSE,
            CliError::Core(E::Parse { .. }) => exit::PARSE,
            CliError::Core(E::Resource { .. }) => exit::RESOURCE,
            CliError::Core(E::Divergence { .. }) | CliError::Diverged { .. } => exit::DIVERGENCE,
            CliError::ComparisonFailed { .. } => exit::COMPARISON,
            CliError::Core(_) | CliError::Io(_) | CliError::SamplesFailed { .. } => exit::FAILURE,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
