//! Forward semantics of the SPD network layers.

pub mod activation;
pub mod conv;
pub mod diag;
pub mod head;
pub mod recursive;

pub use activation::{gate_activation, overflow_guard, spd_activate, Activation, OVERFLOW_CLAMP};
pub use conv::{conv2d_valid, materialize_kernel, materialize_kernels, spd_conv_forward, SpdKernelBank};
pub use diag::{diag_log_euclidean_distance, diagonalize_forward};
pub use head::{cross_entropy_loss, head_forward, softmax, HeadParams, PROB_FLOOR};
pub use recursive::{
    spd_gru_rollout, spd_gru_step, spd_gru_trajectory, BiasMode, ChannelProjections, RecursiveParams,
    RecursiveState,
};
