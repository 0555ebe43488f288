//! Layers, initializers, losses and penalties.

mod init;
mod layer;
mod loss;
mod params;

pub use init::{xavier_bound, xavier_init, xavier_tensor};
pub use layer::{
    ForwardCtx, Layer, LayerKind, Mode, RunningStats, Sequential, BATCH_NORM_EPS,
    BATCH_NORM_MOMENTUM,
};
pub use loss::{
    cross_entropy_loss, l1_latent_penalty, l2_weight_penalty, loss_value, mse_loss,
    relative_reconstruction_loss, LossValue, RELATIVE_LOSS_EPS,
};
pub use params::{ParamEntry, ParamGroup, ParamRole, ParamStore};
