use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A coefficient produced a non-finite value.
    #[error("invalid coefficient: {coefficient} is not finite at x = {x:?}, y = {y:?}")]
    InvalidCoefficient {
        coefficient: &'static str,
        x: Vec<f64>,
        y: Vec<f64>,
    },

    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(
        "implicit solver did not converge at step {step} after {iterations} iterations \
         (last residual {residual:e})"
    )]
    SolverNonConvergence {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error(
        "step-size guard violated: delta = {delta} but delta1 = {delta1}, delta2 = {delta2}, \
         delta3 = {delta3} (strict inequality required)"
    )]
    GuardViolation {
        delta: f64,
        delta1: f64,
        delta2: f64,
        delta3: f64,
    },

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
