use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("function `{name}` expects {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("domain violation in `{subtree}`: {message}")]
    Domain { subtree: String, message: String },

    #[error("variable `{0}` has no value in the evaluation environment")]
    UnboundVariable(String),

    #[error("geometry error at x={x:?}, u={u:?}: {message}")]
    Geometry {
        message: String,
        x: Vec<f64>,
        u: Vec<f64>,
    },

    #[error("derivative depth {requested} exceeds cap {cap}")]
    DepthCap { requested: usize, cap: usize },

    #[error("integration failed at t={t}: {message}")]
    Integration { t: f64, message: String },

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("empty sample set")]
    EmptySample,

    #[error("ill-conditioned span: {0}")]
    IllConditioned(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
}

impl Error {
    pub(crate) fn geometry(message: impl Into<String>, x: &[f64], u: &[f64]) -> Self {
        Error::Geometry {
            message: message.into(),
            x: x.to_vec(),
            u: u.to_vec(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
