use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("series diverges for alpha = {0} (need alpha > 2)")]
    Divergent(f64),
    #[error("buffer at cell {cell} holds {len} packets; schedule is unstable")]
    Instability { cell: usize, len: usize },
    #[error("no delivered packets; delay is undefined")]
    UndefinedDelay,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
