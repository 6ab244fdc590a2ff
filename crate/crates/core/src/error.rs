use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("eigenvalue {value:e} of mode {mode} is negative beyond tolerance")]
    NegativeEigenvalue { mode: usize, value: f64 },

    #[error(
        "mode alignment failed at hyper node {node}: best overlap {overlap:.4} for mode {mode}"
    )]
    ModeAlignment {
        node: usize,
        mode: usize,
        overlap: f64,
    },

    #[error("quantile evaluation failed: {0}")]
    Quantile(String),

    #[error("galerkin division is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularDivision { condition: f64 },

    #[error("flow solver blew up at step {step}: {reason}")]
    BlowUp { step: usize, reason: String },

    #[error("flow solver did not converge in {steps} steps (residual {residual:e})")]
    NotConverged { steps: usize, residual: f64 },

    #[error("covariance matrix is not positive definite at quadrature node {node}")]
    NotPositiveDefinite { node: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad input rather than by a numerical failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::DimensionMismatch { .. } => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
