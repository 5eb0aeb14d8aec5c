use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("ensemble needs at least 2 particles, got {0}")]
    TooFewParticles(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("forward model does not provide a jacobian")]
    MissingJacobian,

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("numerical failure at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Attaches the sampler step index to an error raised while advancing it.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Step index carried by the error, if any.
    pub fn step(&self) -> Option<usize> {
        match self {
            Error::AtStep { step, .. } => Some(*step),
            _ => None,
        }
    }
}
