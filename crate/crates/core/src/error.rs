use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration: wrong sizes, out-of-range
    /// coefficients, unresolved ids.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    /// A time stepper produced a non-finite state. Carries the last valid
    /// parameter vector.
    #[error("divergence at step {step} (t = {time}): {message}")]
    Divergence {
        step: usize,
        time: f64,
        message: String,
        last_theta: Vec<f64>,
    },

    /// A mathematical precondition of a bound or scheme does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Tangent space collapse detected while the singular policy demands a hard failure.
    #[error("rank-deficient dynamics at step {step}: effective rank {rank} < {n_params}")]
    RankDeficient {
        step: usize,
        rank: usize,
        n_params: usize,
    },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}
