use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in `{block}` block at line {line}: {msg}")]
    Parse {
        block: String,
        line: usize,
        msg: String,
    },

    #[error("invalid case: {0}")]
    Validation(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular matrix after diagonal shifts (sigma_min estimate {sigma_min_estimate:.3e})")]
    Singular { sigma_min_estimate: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("power flow did not converge: {0}")]
    PowerFlow(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
