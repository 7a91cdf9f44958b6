use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("no submodel with positive prior mass has a full-rank design")]
    NoValidModel,

    #[error("oracle failure: {0}")]
    OracleFailure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
