use thiserror::Error;

/// Errors produced by graph construction, metric computation and the
/// simulation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graph generation failed: {0}")]
    GenerationFailure(String),

    #[error("edge list parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("graph validation failed: {0}")]
    Validation(String),

    #[error("{what} exceeds cap of {cap} (got {got}); {hint}")]
    CapExceeded {
        what: &'static str,
        cap: usize,
        got: usize,
        hint: &'static str,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error(
        "CONGEST bit budget violated in round {round} on link {node}:{port}: \
         payload kind `{kind}` needs {bits} bits/round, budget is {budget}"
    )]
    BudgetViolation {
        round: u64,
        node: usize,
        port: usize,
        kind: &'static str,
        bits: u64,
        budget: u64,
    },

    #[error("protocol corruption: {0}")]
    ProtocolCorruption(String),
}

pub type Result<T> = std::result::Result<T, Error>;
