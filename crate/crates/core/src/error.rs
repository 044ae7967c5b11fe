use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Nn(#[from] m2ac_nn::NnError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CoreError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Io(format!("json: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
