use thiserror::Error;

/// Errors produced by model construction, evaluation and the derivative readouts.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("negative entry in {what} (value {value})")]
    Negativity { what: String, value: f64 },

    #[error("quadratic module {module} has nonpositive alpha {value}")]
    NonPositiveAlpha { module: usize, value: f64 },

    #[error("conic module {module} has negative lambda {value}")]
    NegativeLambda { module: usize, value: f64 },

    #[error("non-finite parameter in {0}")]
    NonFiniteParameter(String),

    #[error("input contains non-finite values")]
    NonFiniteInput,

    #[error("invalid architecture descriptor: {0}")]
    InvalidDescriptor(String),

    #[error("infeasible dual branch: {0}")]
    InfeasibleBranch(String),

    #[error("input is degenerate at tolerance {tau}: {relu} zero preactivations, {conic} zero conic residuals")]
    DegenerateInput { tau: f64, relu: usize, conic: usize },

    #[error("too many degeneracies: {found} (limit {limit})")]
    TooManyDegeneracies { found: usize, limit: usize },

    #[error("non-finite function evaluation")]
    NonFiniteEvaluation,

    #[error("linear solve failed: {0}")]
    SolveFailure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported format_version {0}")]
    UnsupportedVersion(u64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        let full = e.to_string();
        let message = match full.rsplit_once(" at line ") {
            Some((head, _)) => head.to_string(),
            None => full,
        };
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
