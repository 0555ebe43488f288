//! Tensors, the reverse-mode tape and finite-difference gradient checking.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{BatchStats, GradientMap, Graph, NodeId, ParamId};
pub use kernels::ConvGeometry;
pub use tensor::Tensor;
