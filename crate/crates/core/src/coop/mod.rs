//! The composite network: a primary network split at an attach point, with a
//! cooperating bottleneck auto-encoder reconstructing the feature vector.

mod arch;
mod network;

pub use arch::{select_attach_point, ArchConfig, AttachPoint, BlockSpec, DEFAULT_ATTACH};
pub use network::{build_composite, CompositeLoss, CompositeNetwork, ForwardResult, NetworkVariant, Target};
