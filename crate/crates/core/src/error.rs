use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("window too small: {0}")]
    WindowTooSmall(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("target set must lie inside the box with margin >= 1")]
    Margin,
    #[error("box mismatch: {0}")]
    BoxMismatch(String),
    #[error("circuit is not open in the dual configuration: {0}")]
    CircuitNotOpen(String),
    #[error("precondition unmet: {0}")]
    PreconditionUnmet(String),
    #[error("merge history of band [{lo}, {hi}] reaches the window edge")]
    HistoryIncomplete { lo: i64, hi: i64 },
    #[error("target set is not on the inside of a good box")]
    NotInside,
    #[error("no circuit could be extracted from a good box")]
    NoCircuit,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite and > 0, got {value}")))
    }
}

pub(crate) fn check_unit_open(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {value}")))
    }
}
