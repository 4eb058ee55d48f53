//! Brute-force constructions used to certify the layer implementations.
//! All of them go through the Jacobi eigen-solver and are deliberately slow.

use serde::Serialize;

use crate::eigen::sym_eig;
use crate::error::{invalid, DmtError, Result};
use crate::layers::Activation;
use crate::tensor::{Mat, McSpdTensor};

/// Relative symmetry residual accepted by [`certify_spd`].
pub const CERT_SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues down to `−CERT_EIG_TOL · trace / D` are accepted as numerically PD.
pub const CERT_EIG_TOL: f64 = 1e-10;

/// Symmetric factor `H = U·diag(√λ)` with `HHᵀ = W`; returns the columns `h₁ … h_K`.
pub fn kernel_factorize(w: &Mat) -> Result<Vec<Vec<f64>>> {
    let pair = sym_eig(w)?;
    if let Some(bad) = pair.values.iter().find(|v| !(**v > 0.0)) {
        return Err(DmtError::NotSpd {
            channel: 0,
            min_eigenvalue: *bad,
        });
    }
    let k = w.rows();
    Ok((0..k)
        .map(|j| {
            let s = pair.values[j].sqrt();
            (0..k).map(|i| pair.vectors.get(i, j) * s).collect()
        })
        .collect())
}

/// Banded matrix `G_h ∈ R^{(D−K+1)×D}`: row `i` holds `h` in columns `i .. i+K`.
pub fn toeplitz_band(h: &[f64], d: usize) -> Result<Mat> {
    let k = h.len();
    if k == 0 || d < k {
        return Err(invalid(format!("band of width {k} does not fit dimension {d}")));
    }
    let n = d - k + 1;
    Ok(Mat::from_fn(n, d, |i, j| {
        if j >= i && j < i + k {
            h[j - i]
        } else {
            0.0
        }
    }))
}

/// Single-channel convolution evaluated as `Σᵢ G_{hᵢ} X G_{hᵢ}ᵀ` from a factorization of `w`.
pub fn toeplitz_conv_oracle(x: &Mat, w: &Mat) -> Result<Mat> {
    let d = x.rows();
    let k = w.rows();
    if d < k {
        return Err(invalid(format!("input dimension {d} is smaller than kernel size {k}")));
    }
    let n = d - k + 1;
    let mut out = Mat::zeros(n, n);
    for h in kernel_factorize(w)? {
        let g = toeplitz_band(&h, d)?;
        out.add_assign(&g.matmul(x)?.matmul_t(&g)?)?;
    }
    Ok(out)
}

/// Truncated Hadamard power series of `kind` with `terms` terms
/// (`exp`: powers 0,1,2,…; `sinh`: 1,3,5,…; `cosh`: 0,2,4,…).
pub fn hadamard_series_oracle(x: &Mat, kind: Activation, terms: usize) -> Mat {
    let (first, step) = match kind {
        Activation::Exp => (0usize, 1usize),
        Activation::Sinh => (1, 2),
        Activation::Cosh => (0, 2),
    };
    let mut out = Mat::zeros(x.rows(), x.cols());
    for t in 0..terms {
        let power = first + step * t;
        let mut factorial = 1.0;
        let mut term = Mat::filled(x.rows(), x.cols(), 1.0);
        for i in 1..=power {
            factorial *= i as f64;
            term = term.mul_elem(x).expect("same shape");
        }
        out.add_assign(&term.scale(1.0 / factorial)).expect("same shape");
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct ChannelCertificate {
    pub index: usize,
    pub symmetry_residual: f64,
    pub min_eigenvalue: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpdReport {
    pub channels: Vec<ChannelCertificate>,
}

impl SpdReport {
    pub fn pass(&self) -> bool {
        self.channels.iter().all(|c| c.pass)
    }

    pub fn first_failure(&self) -> Option<&ChannelCertificate> {
        self.channels.iter().find(|c| !c.pass)
    }
}

/// Certifies a single matrix; `index` is carried into the certificate.
pub fn certify_mat(m: &Mat, index: usize) -> ChannelCertificate {
    let symmetry_residual = m.symmetry_residual();
    let d = m.rows().max(1) as f64;
    let threshold = -CERT_EIG_TOL * m.trace().abs() / d;
    let min_eigenvalue = if m.is_finite() && m.is_square() {
        match sym_eig(&m.symmetrize()) {
            Ok(pair) => pair.values[0],
            Err(_) => f64::NAN,
        }
    } else {
        f64::NAN
    };
    let pass = symmetry_residual <= CERT_SYMMETRY_TOL && min_eigenvalue > threshold;
    ChannelCertificate {
        index,
        symmetry_residual,
        min_eigenvalue,
        threshold,
        pass,
    }
}

/// Per-channel symmetry residual and smallest eigenvalue of a multi-channel tensor.
pub fn certify_spd(x: &McSpdTensor) -> SpdReport {
    SpdReport {
        channels: x
            .mats()
            .iter()
            .enumerate()
            .map(|(i, m)| certify_mat(m, i))
            .collect(),
    }
}

/// Matrix logarithm of an SPD matrix through its eigen-decomposition.
pub fn spd_log(a: &Mat) -> Result<Mat> {
    let pair = sym_eig(a)?;
    if let Some(bad) = pair.values.iter().find(|v| !(**v > 0.0)) {
        return Err(DmtError::NotSpd {
            channel: 0,
            min_eigenvalue: *bad,
        });
    }
    Ok(pair.reconstruct_with(f64::ln))
}

/// `‖log A − log B‖_F` through two eigen-decompositions.
pub fn general_log_euclidean(a: &Mat, b: &Mat) -> Result<f64> {
    Ok(spd_log(a)?.sub(&spd_log(b)?)?.frobenius())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::conv2d_valid;
    use crate::random::{random_spd, seeded};

    #[test]
    fn factorize_examples() {
        let h = kernel_factorize(&Mat::identity(3)).unwrap();
        for (j, col) in h.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
        let h = kernel_factorize(&Mat::identity(2).scale(4.0)).unwrap();
        assert_eq!(h, vec![vec![2.0, 0.0], vec![0.0, 2.0]]);
        let mut rng = seeded(3);
        let w = random_spd(&mut rng, 3, 0.1);
        let cols = kernel_factorize(&w).unwrap();
        let hm = Mat::from_fn(3, 3, |i, j| cols[j][i]);
        assert!(hm.matmul_t(&hm).unwrap().max_abs_diff(&w) < 1e-10);
        assert!(kernel_factorize(&Mat::diag(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn band_layout() {
        let g = toeplitz_band(&[5.0, 7.0], 3).unwrap();
        assert_eq!(g, Mat::from_rows(&[[5.0, 7.0, 0.0], [0.0, 5.0, 7.0]]));
        assert!(toeplitz_band(&[1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn oracle_scalar_kernel() {
        let x = Mat::from_rows(&[[2.0, 0.5], [0.5, 1.0]]);
        let o = toeplitz_conv_oracle(&x, &Mat::from_rows(&[[3.0]])).unwrap();
        assert!(o.max_abs_diff(&x.scale(3.0)) < 1e-14);
    }

    #[test]
    fn oracle_matches_direct_convolution() {
        let mut rng = seeded(11);
        let x = random_spd(&mut rng, 8, 0.1);
        let w = random_spd(&mut rng, 3, 0.1);
        let a = toeplitz_conv_oracle(&x, &w).unwrap();
        let b = conv2d_valid(&x, &w).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-10);
    }

    #[test]
    fn series_examples() {
        let zero = Mat::zeros(3, 3);
        assert_eq!(hadamard_series_oracle(&zero, Activation::Exp, 10), Mat::filled(3, 3, 1.0));
        let d = Mat::diag(&[0.5, -1.0]);
        let s = hadamard_series_oracle(&d, Activation::Sinh, 15);
        assert!(s.max_abs_diff(&Mat::diag(&[0.5f64.sinh(), (-1.0f64).sinh()])) < 1e-15);
        let x = Mat::from_rows(&[[1.0, 0.5], [0.5, 1.0]]);
        let s = hadamard_series_oracle(&x, Activation::Exp, 20);
        assert!(s.max_abs_diff(&x.map(f64::exp)) < 1e-12);
        let x = Mat::from_rows(&[[2.0, -1.5], [-1.5, 2.0]]);
        for kind in [Activation::Exp, Activation::Sinh, Activation::Cosh] {
            let s = hadamard_series_oracle(&x, kind, 20);
            assert!(s.max_abs_diff(&x.map(|v| kind.apply(v))) < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn series_converges_monotonically() {
        let x = Mat::from_rows(&[[2.0, 1.0], [1.0, 1.5]]);
        let exact = x.map(f64::exp);
        let mut last = f64::INFINITY;
        for terms in 1..=20 {
            let err = hadamard_series_oracle(&x, Activation::Exp, terms).max_abs_diff(&exact);
            assert!(err <= last);
            last = err;
        }
    }

    #[test]
    fn certify_examples() {
        let t = McSpdTensor::new(vec![Mat::identity(3), Mat::identity(3)]).unwrap();
        let r = certify_spd(&t);
        assert!(r.pass());
        assert!((r.channels[0].min_eigenvalue - 1.0).abs() < 1e-15);
        let t = McSpdTensor::new(vec![Mat::identity(2), Mat::diag(&[3.0, -1.0])]).unwrap();
        let r = certify_spd(&t);
        assert!(!r.pass());
        assert_eq!(r.first_failure().unwrap().index, 1);
    }

    #[test]
    fn log_euclidean_examples() {
        let mut rng = seeded(5);
        let a = random_spd(&mut rng, 4, 0.2);
        assert!(general_log_euclidean(&a, &a).unwrap() < 1e-12);
        let d = general_log_euclidean(&Mat::identity(5).scale(3.0), &Mat::identity(5)).unwrap();
        assert!((d - 5f64.sqrt() * 3f64.ln()).abs() < 1e-12);
        assert!(general_log_euclidean(&Mat::diag(&[1.0, -1.0]), &Mat::identity(2)).is_err());
    }
}
