use alloc::string::String;

/// Errors produced by the core numeric routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    DimensionMismatch {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{0} is not supported for Gaussian visible units")]
    GaussianUnsupported(&'static str),
    #[error("model has {units} units, above the exact-enumeration cap of {cap}")]
    AboveEnumerationCap { units: usize, cap: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("non-finite value in {stage} at epoch {epoch}, batch {batch}")]
    NonFinite {
        stage: &'static str,
        epoch: usize,
        batch: usize,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(axis: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            axis,
            expected,
            actual,
        })
    }
}
