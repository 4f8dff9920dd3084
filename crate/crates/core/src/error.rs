use thiserror::Error;

use crate::expr::{EvalError, ParseError};

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {field}: {source}")]
    Parse {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("evaluation error: {0}")]
    Eval(#[from] EvalError),
    #[error("invalid problem data: {0}")]
    InvalidData(String),
    #[error("coercivity violated: {0}")]
    Coercivity(String),
    #[error("cell problem not solvable: exchange field has cell mean {mean:e}")]
    Solvability { mean: f64 },
    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("singular matrix at row {0}")]
    Singular(usize),
    #[error("operator block is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("resolution constraint violated: {0}")]
    Resolution(String),
    #[error("incompatible inputs: {0}")]
    Incompatible(String),
    #[error("at macro point {point:?}: {source}")]
    AtMacroPoint {
        point: Vec<f64>,
        #[source]
        source: Box<Error>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
