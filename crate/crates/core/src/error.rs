use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid configuration: {0}")]
    InvalidGrid(String),
    #[error("episode already terminated after {steps} steps")]
    TerminalState { steps: u32 },
    #[error("ensemble needs at least 2 heads, got {0}")]
    TooFewHeads(usize),
    #[error("need at least 2 annotators, got {0}")]
    TooFewAnnotators(usize),
    #[error("uncertainty must be non-negative and finite, got {name} = {value}")]
    NegativeUncertainty { name: &'static str, value: f64 },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("baseline must be positive, got {0}")]
    NonPositiveBaseline(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
