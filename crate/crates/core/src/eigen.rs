//! Symmetric eigen-decomposition by cyclic Jacobi rotations.
//!
//! Used only to certify results (SPD checks, log-Euclidean oracle, kernel
//! factorization). Nothing on the forward or backward path of the network
//! calls into this module.

use crate::error::{invalid, DmtError, Result};
use crate::tensor::Mat;

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;
const OFF_TOL: f64 = 1e-12;

/// Eigenvalues in ascending order, with the matching eigenvectors as the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl EigenPair {
    /// `U · diag(f(λ)) · Uᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.values.len();
        let mapped: Vec<f64> = self.values.iter().map(|v| f(*v)).collect();
        let scaled = Mat::from_fn(n, n, |i, j| self.vectors.get(i, j) * mapped[j]);
        scaled
            .matmul_t(&self.vectors)
            .expect("eigenvector matrix is square")
    }

    pub fn reconstruct(&self) -> Mat {
        self.reconstruct_with(|v| v)
    }
}

fn off_diagonal_norm(a: &Mat) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.get(i, j) * a.get(i, j);
            }
        }
    }
    s.sqrt()
}

/// Full eigen-decomposition of a symmetric matrix.
pub fn sym_eig(a: &Mat) -> Result<EigenPair> {
    if !a.is_square() {
        return Err(invalid(format!(
            "sym_eig needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    let residual = a.symmetry_residual();
    if residual > SYMMETRY_TOL {
        return Err(DmtError::NotSymmetric {
            op: "sym_eig",
            residual,
        });
    }
    let n = a.rows();
    let mut m = a.symmetrize();
    let mut v = Mat::identity(n);
    let target = OFF_TOL * a.frobenius();

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&m);
        if off <= target || off == 0.0 {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(DmtError::NoConvergence {
                sweeps,
                residual: off,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // m ← Jᵀ m J with the rotation in the (p, q) plane.
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                m.set(p, q, 0.0);
                m.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).total_cmp(&m.get(j, j)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let vectors = Mat::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok(EigenPair { values, vectors })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Mat) -> Result<f64> {
    Ok(sym_eig(a)?.values[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_pair(a: &Mat, pair: &EigenPair) {
        let n = a.rows();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        assert!(pair.reconstruct().max_abs_diff(a) <= 1e-9 * scale);
        let gram = pair.vectors.t_matmul(&pair.vectors).unwrap();
        assert!(gram.max_abs_diff(&Mat::identity(n)) <= 1e-10);
        assert!(pair.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn diagonal_input() {
        let a = Mat::diag(&[2.0, 3.0]);
        let pair = sym_eig(&a).unwrap();
        assert_eq!(pair.values, vec![2.0, 3.0]);
        assert_eq!(pair.vectors, Mat::identity(2));
    }

    #[test]
    fn two_by_two_char_poly() {
        // λ² − 4λ + 3 = 0 → {1, 3}
        let a = Mat::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        let pair = sym_eig(&a).unwrap();
        assert!((pair.values[0] - 1.0).abs() < 1e-14);
        assert!((pair.values[1] - 3.0).abs() < 1e-14);
        check_pair(&a, &pair);
        assert!((min_eigenvalue(&a).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identity_and_min_eigenvalue() {
        let pair = sym_eig(&Mat::identity(5)).unwrap();
        assert!(pair.values.iter().all(|v| *v == 1.0));
        assert_eq!(min_eigenvalue(&Mat::identity(4)).unwrap(), 1.0);
        assert_eq!(min_eigenvalue(&Mat::diag(&[0.5, 7.0])).unwrap(), 0.5);
    }

    #[test]
    fn rejects_non_symmetric() {
        let a = Mat::from_rows(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(matches!(sym_eig(&a), Err(DmtError::NotSymmetric { .. })));
        assert!(sym_eig(&Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn zero_matrix() {
        let pair = sym_eig(&Mat::zeros(3, 3)).unwrap();
        assert_eq!(pair.values, vec![0.0; 3]);
    }

    #[test]
    fn dense_indefinite() {
        let a = Mat::from_fn(6, 6, |i, j| ((i * j) as f64).cos() + (i + j) as f64 * 0.1);
        let pair = sym_eig(&a).unwrap();
        check_pair(&a, &pair);
    }
}
