use thiserror::Error;

use crate::model::TokenId;
use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("token id {id} at position {position} is outside the vocabulary (size {vocab_size})")]
    TokenOutOfRange {
        position: usize,
        id: TokenId,
        vocab_size: usize,
    },

    #[error("input sequence is empty")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("incomplete activation tape: {0}")]
    IncompleteTape(String),

    #[error("zero denominator in {context} with epsilon = 0")]
    Singular { context: &'static str },

    #[error("output step {step} out of range ({decoded} decoded steps)")]
    StepOutOfRange { step: usize, decoded: usize },

    #[error("saliency stack is empty")]
    EmptyStack,

    #[error("need at least {needed} maps, got {got}")]
    TooFewMaps { needed: usize, got: usize },

    #[error("scaling factor {0} outside [0, 1]")]
    InvalidScale(f64),

    #[error("position {position} holds special token {id} and cannot be deleted")]
    SpecialPosition { position: usize, id: TokenId },

    #[error("position {position} is outside the input (length {len})")]
    PositionOutOfRange { position: usize, len: usize },

    #[error("invalid deletion spec: {0}")]
    InvalidDeletion(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("corpus spec invalid: {0}")]
    InvalidCorpus(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by floating-point breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::Divergence { .. }
                | Error::Tensor(TensorError::NonFinite { .. })
        )
    }
}
