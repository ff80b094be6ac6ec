use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    /// Two operands whose shapes cannot be combined by `op`.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Dimension { op: &'static str, msg: String },
    /// The graph was driven in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),
}

impl TensorError {
    pub(crate) fn dim(op: &'static str, msg: impl Into<String>) -> Self {
        Self::Dimension {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Self::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
