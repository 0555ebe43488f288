//! Optimizer, the two-phase training loop, evaluation and checkpoints.

mod adam;
mod checkpoint;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState, Moments};
pub use checkpoint::{load_checkpoint, network_blocks, read_blocks, save_checkpoint, write_blocks};
pub use train::{evaluate, predict, train, train_observed, AlphaMode, EpochRecord, Evaluation, Phase, TrainHistory, TrainSchedule};
