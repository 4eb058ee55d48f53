//! SPD manifold-to-manifold network: layers that map symmetric positive definite
//! feature maps to symmetric positive definite feature maps, reverse-mode training,
//! a skeleton-sequence data pipeline and brute-force certification oracles.

// Negated comparisons below are NaN-rejecting on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod eigen;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod random;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{DmtError, Result};
pub use tensor::{hadamard, Mat, McSpdTensor};
