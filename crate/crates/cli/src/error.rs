use ordinal_causal::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("model fit failed: {0}")]
    Fit(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Fit(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        if e.is_fit_failure() {
            return CliError::Fit(msg);
        }
        match e {
            CoreError::InvalidParameter { .. }
            | CoreError::UnsupportedTau { .. }
            | CoreError::UnsupportedCopula(_)
            | CoreError::InvalidGamma(_)
            | CoreError::InvalidData(_) => CliError::Config(msg),
            _ => CliError::Numeric(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
