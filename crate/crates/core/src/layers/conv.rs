//! SPD convolution: valid cross-correlation of every input channel with an SPD kernel,
//! summed over input channels.

use crate::error::{invalid, DmtError, Result};
use crate::tensor::{Mat, McSpdTensor};

/// Raw convolution parameters. Kernels are materialized as `VᵀV + εI`, so every
/// kernel is SPD no matter what values `V` takes.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdKernelBank {
    out_channels: usize,
    in_channels: usize,
    kernel_size: usize,
    /// Row-major over `(m, c)`: index `m * in_channels + c`.
    raw: Vec<Mat>,
    epsilon: f64,
}

impl SpdKernelBank {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        raw: Vec<Mat>,
        epsilon: f64,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || kernel_size == 0 {
            return Err(invalid("kernel bank dimensions must be positive"));
        }
        if raw.len() != out_channels * in_channels {
            return Err(invalid(format!(
                "kernel bank expects {} raw matrices, got {}",
                out_channels * in_channels,
                raw.len()
            )));
        }
        if let Some(bad) = raw.iter().find(|v| v.shape() != (kernel_size, kernel_size)) {
            return Err(DmtError::Shape {
                op: "SpdKernelBank::new",
                left: (kernel_size, kernel_size),
                right: bad.shape(),
            });
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel_size,
            raw,
            epsilon,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn raw(&self, m: usize, c: usize) -> &Mat {
        &self.raw[m * self.in_channels + c]
    }

    pub fn raw_all(&self) -> &[Mat] {
        &self.raw
    }
}

/// `VᵀV + εI` for a single raw parameter matrix.
pub fn materialize_kernel(v: &Mat, epsilon: f64) -> Mat {
    v.t_matmul(v)
        .expect("raw kernel is square")
        .add_identity(epsilon)
        .symmetrize()
}

/// Materializes every kernel of the bank, row-major over `(out, in)`.
pub fn materialize_kernels(bank: &SpdKernelBank) -> Result<Vec<Mat>> {
    if !(bank.epsilon > 0.0) {
        return Err(invalid(format!(
            "kernel epsilon must be positive, got {}",
            bank.epsilon
        )));
    }
    Ok(bank
        .raw
        .iter()
        .map(|v| materialize_kernel(v, bank.epsilon))
        .collect())
}

/// Single-channel valid cross-correlation `O[i,j] = Σ_p Σ_q W[p,q]·X[i+p, j+q]`.
pub fn conv2d_valid(x: &Mat, w: &Mat) -> Result<Mat> {
    let (d, k) = (x.rows(), w.rows());
    if !x.is_square() || !w.is_square() || d < k {
        return Err(DmtError::Shape {
            op: "conv2d_valid",
            left: x.shape(),
            right: w.shape(),
        });
    }
    let n = d - k + 1;
    let mut out = Mat::zeros(n, n);
    let xd = x.data();
    let od = out.data_mut();
    for p in 0..k {
        for q in 0..k {
            let wpq = w.get(p, q);
            for i in 0..n {
                let xrow = &xd[(i + p) * d + q..(i + p) * d + q + n];
                let orow = &mut od[i * n..(i + 1) * n];
                for (o, xv) in orow.iter_mut().zip(xrow) {
                    *o += wpq * xv;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoints of [`conv2d_valid`] given the output gradient: `(dX, dW)`.
pub(crate) fn conv2d_valid_backward(x: &Mat, w: &Mat, grad_out: &Mat) -> (Mat, Mat) {
    let (d, k) = (x.rows(), w.rows());
    let n = d - k + 1;
    let mut gx = Mat::zeros(d, d);
    let mut gw = Mat::zeros(k, k);
    let g = grad_out.data();
    let xd = x.data();
    for p in 0..k {
        for q in 0..k {
            let wpq = w.get(p, q);
            let mut acc = 0.0;
            for i in 0..n {
                let base = (i + p) * d + q;
                let grow = &g[i * n..(i + 1) * n];
                let xrow = &xd[base..base + n];
                acc += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                let gxd = gx.data_mut();
                for (t, gv) in grow.iter().enumerate() {
                    gxd[base + t] += wpq * gv;
                }
            }
            gw.set(p, q, acc);
        }
    }
    (gx, gw)
}

/// Multi-channel SPD convolution with kernels materialized from the bank.
///
/// Output channel `m` is `Σ_c conv2d_valid(X⁽ᶜ⁾, W⁽ᵐ,ᶜ⁾)`, symmetrized.
pub fn spd_conv_forward(x: &McSpdTensor, bank: &SpdKernelBank) -> Result<McSpdTensor> {
    if x.channels() != bank.in_channels {
        return Err(invalid(format!(
            "conv expects {} input channels, got {}",
            bank.in_channels,
            x.channels()
        )));
    }
    if x.dim() < bank.kernel_size {
        return Err(invalid(format!(
            "input dimension {} is smaller than kernel size {}",
            x.dim(),
            bank.kernel_size
        )));
    }
    let kernels = materialize_kernels(bank)?;
    conv_with_kernels(x, &kernels, bank.out_channels)
}

/// Convolution with explicit (already materialized) kernels, row-major over `(out, in)`.
pub fn conv_with_kernels(x: &McSpdTensor, kernels: &[Mat], out_channels: usize) -> Result<McSpdTensor> {
    let cin = x.channels();
    if kernels.len() != out_channels * cin {
        return Err(invalid("kernel count does not match channel layout"));
    }
    let n = x.dim() + 1 - kernels[0].rows();
    let mut outs = Vec::with_capacity(out_channels);
    for m in 0..out_channels {
        let mut acc = Mat::zeros(n, n);
        for c in 0..cin {
            acc.add_assign(&conv2d_valid(x.channel(c), &kernels[m * cin + c])?)?;
        }
        outs.push(acc.symmetrize());
    }
    Ok(McSpdTensor::from_parts(n, outs))
}

/// Like [`spd_conv_forward`], but certifies every input channel first and
/// rejects the first one that is not SPD.
pub fn spd_conv_forward_certified(x: &McSpdTensor, bank: &SpdKernelBank) -> Result<McSpdTensor> {
    let report = crate::verify::certify_spd(x);
    if let Some(ch) = report.channels.iter().find(|c| !c.pass) {
        return Err(DmtError::NotSpd {
            channel: ch.index,
            min_eigenvalue: ch.min_eigenvalue,
        });
    }
    spd_conv_forward(x, bank)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank1(v: Mat, eps: f64) -> SpdKernelBank {
        let k = v.rows();
        SpdKernelBank::new(1, 1, k, vec![v], eps).unwrap()
    }

    #[test]
    fn materialize_examples() {
        let w = materialize_kernels(&bank1(Mat::identity(2), 1e-4)).unwrap();
        assert!(w[0].max_abs_diff(&Mat::identity(2).scale(1.0 + 1e-4)) < 1e-15);
        let w = materialize_kernels(&bank1(Mat::zeros(2, 2), 1e-4)).unwrap();
        assert_eq!(w[0], Mat::identity(2).scale(1e-4));
        // VᵀV for V = [[1,2],[3,4]]: [[1+9, 2+12],[2+12, 4+16]]
        let v = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(
            materialize_kernel(&v, 0.0),
            Mat::from_rows(&[[10.0, 14.0], [14.0, 20.0]])
        );
    }

    #[test]
    fn materialize_rejects_nonpositive_epsilon() {
        assert!(materialize_kernels(&bank1(Mat::identity(2), 0.0)).is_err());
        assert!(materialize_kernels(&bank1(Mat::identity(2), -1.0)).is_err());
    }

    #[test]
    fn scalar_kernel_scales() {
        let x = McSpdTensor::single(Mat::from_rows(&[[2.0, 0.5], [0.5, 1.0]])).unwrap();
        let out = conv_with_kernels(&x, &[Mat::from_rows(&[[2.0]])], 1).unwrap();
        assert_eq!(out.channel(0), &x.channel(0).scale(2.0));
    }

    #[test]
    fn identity_kernel_on_identity() {
        // Each output entry is X[i,j] + X[i+1,j+1].
        let x = McSpdTensor::single(Mat::identity(3)).unwrap();
        let out = conv_with_kernels(&x, &[Mat::identity(2)], 1).unwrap();
        assert_eq!(out.channel(0), &Mat::from_rows(&[[2.0, 0.0], [0.0, 2.0]]));
    }

    #[test]
    fn unit_kernels_sum_channels() {
        let a = Mat::from_rows(&[[2.0, 1.0], [1.0, 3.0]]);
        let b = Mat::from_rows(&[[1.0, -0.5], [-0.5, 4.0]]);
        let x = McSpdTensor::new(vec![a.clone(), b.clone()]).unwrap();
        let one = Mat::from_rows(&[[1.0]]);
        let out = conv_with_kernels(&x, &[one.clone(), one], 1).unwrap();
        assert_eq!(out.channel(0), &a.add(&b).unwrap());
    }

    #[test]
    fn rejects_small_input_and_channel_mismatch() {
        let x = McSpdTensor::single(Mat::identity(2)).unwrap();
        assert!(spd_conv_forward(&x, &bank1(Mat::identity(3), 1e-3)).is_err());
        let bank = SpdKernelBank::new(1, 2, 1, vec![Mat::identity(1); 2], 1e-3).unwrap();
        assert!(spd_conv_forward(&x, &bank).is_err());
    }

    #[test]
    fn certified_mode_reports_channel() {
        let bad = Mat::diag(&[1.0, -1.0]);
        let x = McSpdTensor::new(vec![Mat::identity(2), bad]).unwrap();
        let bank = SpdKernelBank::new(1, 2, 1, vec![Mat::identity(1); 2], 1e-3).unwrap();
        match spd_conv_forward_certified(&x, &bank) {
            Err(DmtError::NotSpd { channel, .. }) => assert_eq!(channel, 1),
            other => panic!("expected NotSpd, got {other:?}"),
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = Mat::from_fn(5, 5, |i, j| ((i * 5 + j) as f64 * 0.37).sin());
        let w = Mat::from_fn(3, 3, |i, j| ((i + 2 * j) as f64 * 0.51).cos());
        let g = Mat::from_fn(3, 3, |i, j| 1.0 + i as f64 - 0.3 * j as f64);
        let f = |x: &Mat, w: &Mat| conv2d_valid(x, w).unwrap().mul_elem(&g).unwrap().sum();
        let (gx, gw) = conv2d_valid_backward(&x, &w, &g);
        let h = 1e-6;
        for idx in 0..25 {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (f(&xp, &w) - f(&xm, &w)) / (2.0 * h);
            assert!((fd - gx.data()[idx]).abs() < 1e-8);
        }
        for idx in 0..9 {
            let mut wp = w.clone();
            wp.data_mut()[idx] += h;
            let mut wm = w.clone();
            wm.data_mut()[idx] -= h;
            let fd = (f(&x, &wp) - f(&x, &wm)) / (2.0 * h);
            assert!((fd - gw.data()[idx]).abs() < 1e-8);
        }
    }
}
