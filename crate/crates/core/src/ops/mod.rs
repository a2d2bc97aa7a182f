//! Layer primitives with explicit forward and backward passes.
//!
//! Every forward function returns its output together with whatever the
//! matching backward function needs. Nothing here owns parameters; callers
//! pass weights in and receive gradients back, which keeps the kernels usable
//! both from the network and from the finite-difference checker.

pub mod activation;
pub mod conv;
pub mod dropout;
pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod se;

pub use activation::{activation, activation_backward, ActKind};
pub use conv::{
    conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, ConvGeometry, Padding,
};
pub use dropout::{drop_path, dropout, DropMask};
pub use gradcheck::grad_check;
pub use linear::{fully_connected, fully_connected_backward};
pub use loss::{
    cross_entropy_loss, one_hot, regularization_grad, regularization_penalty, softmax,
    softmax_ce_grad, softmax_rows,
};
pub use norm::{batch_norm, batch_norm_backward, BatchNormCache, BnStats};
pub use pool::{global_avg_pool, global_avg_pool_backward};
pub use se::{se_reduced_channels, squeeze_excite, squeeze_excite_backward, SeCache, SeGrads, SeWeights};

/// Whether a layer runs with training-time behaviour (batch statistics, dropout).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}
