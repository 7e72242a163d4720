use thiserror::Error;

/// Errors raised by the library. The CLI maps each variant onto an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("query ({t}, {x}) outside the domain of the field")]
    OutOfDomain { t: f64, x: f64 },

    #[error("invalid index: {0}")]
    Index(String),

    #[error("no boundary exit within the time budget {budget} (component {component}, t = {t}, x = {x})")]
    NoExit { component: usize, t: f64, x: f64, budget: f64 },

    #[error("fixed-point iteration did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("incompatible grids: {0}")]
    Grid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed table file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoExit { .. } | Error::NotConverged { .. } | Error::NonFinite(_) | Error::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
