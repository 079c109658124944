use thiserror::Error;

/// Errors produced by the sampling, analysis and training routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("singular evaluation at t = {t}: {what}")]
    Singularity { t: f64, what: &'static str },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("negative radicand at t = {t}, dt = {dt}, sigma = {sigma}")]
    NegativeRadicand { t: f64, dt: f64, sigma: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("step {index}: {source}")]
    AtStep {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_step(index: usize, source: Error) -> Self {
        Error::AtStep {
            index,
            source: Box::new(source),
        }
    }

    /// Strips `AtStep` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
