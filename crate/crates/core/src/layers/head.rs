//! Fully connected classification head, softmax and cross-entropy.

use crate::error::{invalid, DmtError, Result};
use crate::tensor::Mat;

/// Probability floor applied to the true-class probability inside the log.
pub const PROB_FLOOR: f64 = 1e-15;

/// `feature → tanh(x·W₁ + b₁) → ·W₂ + b₂ → softmax`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// `features × hidden`.
    pub fc_weight: Mat,
    /// `1 × hidden`.
    pub fc_bias: Mat,
    /// `hidden × classes`.
    pub out_weight: Mat,
    /// `1 × classes`.
    pub out_bias: Mat,
}

impl HeadParams {
    pub fn zeros(features: usize, hidden: usize, classes: usize) -> Self {
        Self {
            fc_weight: Mat::zeros(features, hidden),
            fc_bias: Mat::zeros(1, hidden),
            out_weight: Mat::zeros(hidden, classes),
            out_bias: Mat::zeros(1, classes),
        }
    }

    pub fn features(&self) -> usize {
        self.fc_weight.rows()
    }

    pub fn classes(&self) -> usize {
        self.out_weight.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let hidden = self.fc_weight.cols();
        let checks = [
            (self.fc_bias.shape(), (1, hidden)),
            (self.out_weight.shape(), (hidden, self.classes())),
            (self.out_bias.shape(), (1, self.classes())),
        ];
        for (got, want) in checks {
            if got != want {
                return Err(DmtError::Shape {
                    op: "HeadParams",
                    left: want,
                    right: got,
                });
            }
        }
        Ok(())
    }

    /// Output logits for one feature vector.
    pub fn logits(&self, feat: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        if feat.len() != self.features() {
            return Err(DmtError::Shape {
                op: "head_forward",
                left: (1, feat.len()),
                right: self.fc_weight.shape(),
            });
        }
        let x = Mat::row_vector(feat.to_vec());
        let hidden = x.matmul(&self.fc_weight)?.add(&self.fc_bias)?.map(f64::tanh);
        Ok(hidden.matmul(&self.out_weight)?.add(&self.out_bias)?.into_vec())
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let peak = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - peak).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Class probabilities for one feature vector.
pub fn head_forward(feat: &[f64], h: &HeadParams) -> Result<Vec<f64>> {
    Ok(softmax(&h.logits(feat)?))
}

/// Summed (not averaged) cross-entropy `−Σ_j ln P(y_j | X_j)` over a batch.
pub fn cross_entropy_loss(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(invalid(format!(
            "{} probability rows for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &label) in probs.iter().zip(labels) {
        let p = *row
            .get(label)
            .ok_or_else(|| invalid(format!("label {label} out of range for {} classes", row.len())))?;
        let p = if p < PROB_FLOOR {
            log::warn!("true-class probability {p:e} clamped to {PROB_FLOOR:e}");
            PROB_FLOOR
        } else {
            p
        };
        total -= p.ln();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_head_is_uniform() {
        let h = HeadParams::zeros(6, 4, 5);
        let p = head_forward(&[0.3; 6], &h).unwrap();
        for v in p {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 0.0]);
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let l = [0.3, -1.2, 2.5, 0.0];
        let total: f64 = l.iter().map(|v: &f64| v.exp()).sum();
        let p = softmax(&l);
        for (pi, li) in p.iter().zip(l) {
            assert!((pi - li.exp() / total).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn head_shape_mismatch() {
        let h = HeadParams::zeros(6, 4, 3);
        assert!(head_forward(&[0.0; 5], &h).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy_loss(&[vec![0.0, 1.0]], &[1]).unwrap(), 0.0);
        let uniform = vec![vec![0.25; 4]; 3];
        let e = cross_entropy_loss(&uniform, &[0, 1, 3]).unwrap();
        assert!((e - 3.0 * 4f64.ln()).abs() < 1e-12);
        let e = cross_entropy_loss(&[vec![0.5, 0.5], vec![0.75, 0.25]], &[0, 1]).unwrap();
        assert!((e - 2.0794415416798357).abs() < 1e-12);
        assert!((e - 2.0794).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_clamps_zero() {
        let e = cross_entropy_loss(&[vec![1.0, 0.0]], &[1]).unwrap();
        assert!((e + PROB_FLOOR.ln()).abs() < 1e-12);
        assert!(cross_entropy_loss(&[vec![1.0]], &[1]).is_err());
    }
}
