use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("speed {v:.4} m/s is below the model validity threshold")]
    LowSpeed { v: f64 },

    #[error("path frame singularity: kappa*e = {kappa_e:.6}")]
    PathSingularity { kappa_e: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("equilibrium solver did not converge (best residual {best_residual:.3e})")]
    NoConvergence { best_residual: f64 },

    #[error("equilibrium is infeasible: {0}")]
    Infeasible(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate feature {index}: standard deviation is zero")]
    DegenerateFeature { index: usize },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("malformed row at line {line}: {msg}")]
    MalformedRow { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
