use fairicd::ErrorClass;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Failure to load or validate input files for `augment`.
    #[error("cannot load dataset: {0}")]
    Load(fairicd::Error),

    #[error(transparent)]
    Core(#[from] fairicd::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

impl CliError {
    /// 2 for configuration, 3 for data, 4 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Load(_) | CliError::Io { .. } => 1,
            CliError::Json { .. } => 3,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
                ErrorClass::Io => 1,
            },
        }
    }
}
