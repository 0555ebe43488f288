//! Cooperating auto-encoder subnetworks (CoopSubNet) as a data-driven
//! regularizer for deep networks trained on small budgets.
//!
//! A bottleneck auto-encoder is attached to an intermediate feature layer of a
//! primary network and trained jointly with it. Its relative reconstruction
//! loss pulls the features toward a low-dimensional manifold without
//! constraining the primary architecture.
//!
//! The crate is self-contained:
//!
//! - [`diffcore`]: dense tensors, a define-by-run reverse-mode tape, gradient checks.
//! - [`nn`]: layers, Xavier initialization, losses and penalties.
//! - [`coop`]: the composite network and the loss for each comparison variant.
//! - [`trainer`]: Adam, the burn-in/joint training routine, checkpoints.
//! - [`data`]: IDX ingestion, budget reduction, patches, dilation, synthetic tasks.
//! - [`metrics`]: accuracy, landmark error, Otsu, connected components, Dice, P/R/F1.
//! - [`experiment`]: config-driven runner, reports, comparison tables.
//!
//! Everything runs in `f64` and is bit-reproducible for a given seed.

pub mod coop;
pub mod data;
pub mod diffcore;
mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod selftest;
pub mod trainer;

pub use error::{Error, Result};
