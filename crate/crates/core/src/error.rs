use thiserror::Error;

#[derive(Debug, Error)]
pub enum EsnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("initialization failed: {0}")]
    Init(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

impl EsnError {
    /// Short machine-readable tag used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            EsnError::Config(_) => "config",
            EsnError::Init(_) => "init",
            EsnError::Numerical(_) => "numerical",
            EsnError::Dimension(_) => "dimension",
            EsnError::Contract(_) => "contract",
            EsnError::Data(_) => "data",
            EsnError::Io(_) => "io",
            EsnError::Parse(_) => "parse",
        }
    }
}

pub type Result<T, E = EsnError> = std::result::Result<T, E>;
