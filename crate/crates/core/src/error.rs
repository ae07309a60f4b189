use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid reference state: {0}")]
    InvalidReference(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("insufficient samples: {required} required (K+d+1), {available} available")]
    InsufficientSamples { required: usize, available: usize },

    #[error(
        "empty rank: every singular value fell below {threshold_rel:e} * sigma_max \
         (sigma_max = {sigma_max:e}); lower the threshold or supply more data"
    )]
    EmptyRank { threshold_rel: f64, sigma_max: f64 },

    #[error("eigensolver did not converge after {iterations} iterations (n = {dim})\n{dump}")]
    NoConvergence {
        iterations: usize,
        dim: usize,
        dump: String,
    },

    #[error("ground eigenvalue is degenerate (separation {separation:e})")]
    DegenerateGround { separation: f64 },

    #[error("numerical consistency: {0}")]
    Consistency(String),

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("failed to write report files:\n  {}", .0.join("\n  "))]
    Emit(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
