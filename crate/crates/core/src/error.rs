use std::io;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum UmcError {
    #[error("cannot normalize a zero-norm vector")]
    NormZero,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite gradient in {0}")]
    GradNonFinite(String),

    #[error("bad container: {0}")]
    BadContainer(String),
    #[error("sample count mismatch: {what} has {got}, expected {expected}")]
    CountMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("corrupt data: {0}")]
    CorruptData(String),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("synthetic spec too small: {0}")]
    SpecTooSmall(String),

    #[error("sequence has no unpadded elements")]
    EmptySequence,

    #[error("contrastive batch needs at least 2 origins, got {0}")]
    BatchTooSmall(usize),
    #[error("no anchor in the batch has a positive")]
    NoPositives,
    #[error("dropout rate {0} outside (0, 1)")]
    BadRate(f64),

    #[error("need at least {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("cluster of size {0} is too small for density estimation")]
    ClusterTooSmall(usize),
    #[error("subset of size {0} is too small for cohesion")]
    SubsetTooSmall(usize),

    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("label {label} does not fit k={k}")]
    BadK { label: usize, k: usize },

    #[error("empty sweep grid")]
    BadGrid,
    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl UmcError {
    /// True for errors caused by malformed input data rather than numerics or configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            UmcError::BadContainer(_)
                | UmcError::CountMismatch { .. }
                | UmcError::CorruptData(_)
                | UmcError::LabelOutOfRange { .. }
                | UmcError::DimMismatch { .. }
                | UmcError::EmptySequence
                | UmcError::Io(_)
        )
    }

    /// True for configuration/usage problems.
    pub fn is_usage_error(&self) -> bool {
        matches!(
            self,
            UmcError::BadConfig(_)
                | UmcError::BadGrid
                | UmcError::SpecTooSmall(_)
                | UmcError::BadRate(_)
        )
    }
}

pub type Result<T, E = UmcError> = std::result::Result<T, E>;
