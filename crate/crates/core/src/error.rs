use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the detector core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("sequence has {len} timesteps but the encoder accepts at most {max}; crop it first")]
    CropRequired { len: usize, max: usize },
    #[error("modalities are not aligned: visual has {visual} timesteps, audio has {audio}")]
    Alignment { visual: usize, audio: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("non-finite loss at iteration {iteration}: {breakdown}")]
    NonFinite { iteration: usize, breakdown: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
