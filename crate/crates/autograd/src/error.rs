use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data of length {len} does not fill shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("masked_softmax: row {row} has no unmasked entry")]
    FullyMasked { row: usize },
    #[error("cross_entropy: every target position is ignored")]
    AllIgnored,
    #[error("index {index} out of range for {bound} classes/rows")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
