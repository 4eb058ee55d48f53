//! Diagonalizing layer and the log-Euclidean distance on diagonal SPD matrices.
//!
//! The layer maps a `D × D` SPD channel to the `D² × D²` diagonal matrix
//! `diag(flatten(exp(Z)))`. Only the diagonal is ever stored.

use super::activation::{activate_mat, Activation};
use crate::error::{invalid, Result};
use crate::tensor::McSpdTensor;

/// Element-wise `exp` of every channel, flattened row-major and concatenated
/// over channels. The result is the diagonal of an SPD matrix.
pub fn diagonalize_forward(z: &McSpdTensor) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.channels() * z.dim() * z.dim());
    for m in z.mats() {
        out.extend_from_slice(activate_mat(m, Activation::Exp).data());
    }
    out
}

/// Log-Euclidean distance between two diagonal SPD matrices given by their diagonals.
/// The matrix logarithm reduces to an element-wise `ln`.
pub fn diag_log_euclidean_distance(d1: &[f64], d2: &[f64]) -> Result<f64> {
    if d1.len() != d2.len() {
        return Err(invalid(format!(
            "diagonal lengths differ: {} vs {}",
            d1.len(),
            d2.len()
        )));
    }
    if let Some(bad) = d1.iter().chain(d2).find(|v| !(**v > 0.0)) {
        return Err(invalid(format!("diagonal entry {bad} is not positive")));
    }
    Ok(d1
        .iter()
        .zip(d2)
        .map(|(a, b)| {
            let d = a.ln() - b.ln();
            d * d
        })
        .sum::<f64>()
        .sqrt())
}
