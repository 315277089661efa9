//! Reverse-mode automatic differentiation, layer primitives, and the Adam
//! optimizer used by every model in this crate.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod spectral;
pub mod tensor;

pub use adam::{adam_step, AdamState, Moments, OptimizerConfig};
pub use graph::{BnState, Graph, Mode, NodeId, SharedBn, SharedSn};
pub use spectral::{spectral_normalize, SpectralState};
pub use tensor::{Param, Scalar, Tensor};

/// Errors raised while building or executing computation graphs.
#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unbound input `{0}`")]
    UnboundInput(String),
    #[error("graph has not been evaluated")]
    NotEvaluated,
    #[error("unknown name `{0}`")]
    UnknownName(String),
    #[error("invalid operation: {0}")]
    Invalid(String),
}
