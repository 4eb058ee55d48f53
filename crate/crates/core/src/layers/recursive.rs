//! Gated recursive layer over sequences of multi-channel SPD feature maps.
//!
//! Per channel, with `P(W, X) = WᵀXW`:
//!
//! ```text
//! R_t = gate(P(W_fr, F_t) + P(W_hr, H_{t-1}) + b_r·B + εI)
//! Z_t = gate(P(W_fz, F_t) + P(W_hz, H_{t-1}) + b_z·B + εI)
//! H̃_t = sinh(P(W_fh, F_t) + H_{t-1} ⊙ R_t + b_h·B + εI)
//! H_t = Z_t ⊙ H_{t-1} + H̃_t
//! ```
//!
//! `B` is the all-ones matrix by default ([`BiasMode::Ones`]) or the identity.
//! Biases are stored as raw values `β` and used as `b = β²`.

use serde::{Deserialize, Serialize};

use super::activation::{activate_mat, gate_activation, Activation};
use crate::error::{invalid, DmtError, Result};
use crate::tensor::{Mat, McSpdTensor};

/// Matrix the scalar gate biases are multiplied with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    /// `b·J`, the all-ones matrix (rank one, PSD).
    Ones,
    /// `b·I`.
    Identity,
}

impl BiasMode {
    pub fn add_to(self, x: &Mat, b: f64) -> Mat {
        match self {
            BiasMode::Ones => x.map(|v| v + b),
            BiasMode::Identity => x.add_identity(b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BiasMode::Ones => "ones",
            BiasMode::Identity => "identity",
        }
    }
}

impl std::str::FromStr for BiasMode {
    type Err = DmtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ones" | "j" => Ok(BiasMode::Ones),
            "identity" | "i" => Ok(BiasMode::Identity),
            other => Err(invalid(format!("unknown bias mode {other:?}"))),
        }
    }
}

/// Projections for one channel. Input-side matrices are `in_dim × hidden`,
/// hidden-side ones are `hidden × hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelProjections {
    pub w_fr: Mat,
    pub w_hr: Mat,
    pub w_fz: Mat,
    pub w_hz: Mat,
    pub w_fh: Mat,
}

impl ChannelProjections {
    pub fn as_array(&self) -> [&Mat; 5] {
        [&self.w_fr, &self.w_hr, &self.w_fz, &self.w_hz, &self.w_fh]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecursiveParams {
    pub channels: Vec<ChannelProjections>,
    pub beta_r: f64,
    pub beta_z: f64,
    pub beta_h: f64,
    pub epsilon: f64,
    pub bias_mode: BiasMode,
}

impl RecursiveParams {
    pub fn input_dim(&self) -> usize {
        self.channels[0].w_fr.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.channels[0].w_fr.cols()
    }

    pub fn bias_r(&self) -> f64 {
        self.beta_r * self.beta_r
    }

    pub fn bias_z(&self) -> f64 {
        self.beta_z * self.beta_z
    }

    pub fn bias_h(&self) -> f64 {
        self.beta_h * self.beta_h
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(invalid("recursive layer needs at least one channel"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("recursive epsilon must be positive"));
        }
        let (din, dh) = (self.input_dim(), self.hidden_dim());
        for ch in &self.channels {
            for (w, expect) in [
                (&ch.w_fr, (din, dh)),
                (&ch.w_hr, (dh, dh)),
                (&ch.w_fz, (din, dh)),
                (&ch.w_hz, (dh, dh)),
                (&ch.w_fh, (din, dh)),
            ] {
                if w.shape() != expect {
                    return Err(DmtError::Shape {
                        op: "RecursiveParams",
                        left: expect,
                        right: w.shape(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Logs a warning for every projection whose columns are numerically dependent.
    /// Returns the number of such projections.
    pub fn warn_rank_deficient(&self) -> usize {
        let mut count = 0;
        for (c, ch) in self.channels.iter().enumerate() {
            for (name, w) in ["w_fr", "w_hr", "w_fz", "w_hz", "w_fh"]
                .into_iter()
                .zip(ch.as_array())
            {
                let proxy = column_rank_proxy(w);
                if proxy < 1e-12 {
                    log::warn!(
                        "recursive projection {name} of channel {c} is rank deficient (proxy {proxy:e}); the εI term still keeps outputs PD"
                    );
                    count += 1;
                }
            }
        }
        count
    }
}

/// Smallest squared residual norm from modified Gram-Schmidt over the columns of `w`,
/// a cheap stand-in for the smallest eigenvalue of `WᵀW`.
pub fn column_rank_proxy(w: &Mat) -> f64 {
    if w.cols() > w.rows() {
        return 0.0;
    }
    let mut cols: Vec<Vec<f64>> = (0..w.cols())
        .map(|j| (0..w.rows()).map(|i| w.get(i, j)).collect())
        .collect();
    let mut worst = f64::INFINITY;
    for j in 0..cols.len() {
        let (done, rest) = cols.split_at_mut(j);
        let col = &mut rest[0];
        for q in done.iter() {
            let dot: f64 = q.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            for (c, qv) in col.iter_mut().zip(q) {
                *c -= dot * qv;
            }
        }
        let norm2: f64 = col.iter().map(|v| v * v).sum();
        worst = worst.min(norm2);
        let norm = norm2.sqrt();
        if norm > 0.0 {
            for c in col.iter_mut() {
                *c /= norm;
            }
        }
    }
    worst
}

/// Hidden state plus the gates that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct RecursiveState {
    pub h: Vec<Mat>,
    pub r: Vec<Mat>,
    pub z: Vec<Mat>,
}

impl RecursiveState {
    /// All-zero hidden state. Gates are set to the all-ones matrix.
    pub fn zeros(channels: usize, hidden: usize) -> Self {
        Self {
            h: vec![Mat::zeros(hidden, hidden); channels],
            r: vec![Mat::filled(hidden, hidden, 1.0); channels],
            z: vec![Mat::filled(hidden, hidden, 1.0); channels],
        }
    }

    pub fn hidden(&self) -> McSpdTensor {
        let dim = self.h[0].rows();
        McSpdTensor::from_parts(dim, self.h.clone())
    }
}

/// One step of the recursive layer.
pub fn spd_gru_step(f_t: &McSpdTensor, prev: &RecursiveState, p: &RecursiveParams) -> Result<RecursiveState> {
    if f_t.channels() != p.channels.len() {
        return Err(invalid(format!(
            "recursive layer has {} channels, input has {}",
            p.channels.len(),
            f_t.channels()
        )));
    }
    if f_t.dim() != p.input_dim() {
        return Err(invalid(format!(
            "recursive layer expects {}x{} inputs, got {}x{}",
            p.input_dim(),
            p.input_dim(),
            f_t.dim(),
            f_t.dim()
        )));
    }
    let dh = p.hidden_dim();
    if prev.h.len() != p.channels.len() || prev.h.iter().any(|h| h.shape() != (dh, dh)) {
        return Err(invalid("previous hidden state does not match the layer"));
    }
    let (br, bz, bh) = (p.bias_r(), p.bias_z(), p.bias_h());
    let mut next = RecursiveState {
        h: Vec::with_capacity(p.channels.len()),
        r: Vec::with_capacity(p.channels.len()),
        z: Vec::with_capacity(p.channels.len()),
    };
    for (c, w) in p.channels.iter().enumerate() {
        let f = f_t.channel(c);
        let h_prev = &prev.h[c];
        let pre_r = Mat::congruence(f, &w.w_fr)?.add(&Mat::congruence(h_prev, &w.w_hr)?)?;
        let r = gate_activation(&p.bias_mode.add_to(&pre_r, br).add_identity(p.epsilon).symmetrize());
        let pre_z = Mat::congruence(f, &w.w_fz)?.add(&Mat::congruence(h_prev, &w.w_hz)?)?;
        let z = gate_activation(&p.bias_mode.add_to(&pre_z, bz).add_identity(p.epsilon).symmetrize());
        let pre_h = Mat::congruence(f, &w.w_fh)?.add(&h_prev.mul_elem(&r)?)?;
        let candidate = activate_mat(
            &p.bias_mode.add_to(&pre_h, bh).add_identity(p.epsilon).symmetrize(),
            Activation::Sinh,
        );
        let h = z.mul_elem(h_prev)?.add(&candidate)?.symmetrize();
        next.h.push(h);
        next.r.push(r);
        next.z.push(z);
    }
    Ok(next)
}

/// Folds [`spd_gru_step`] over the sequence from a zero hidden state.
/// Returns every intermediate state, `states[t]` being `H_{t+1}`.
pub fn spd_gru_trajectory(seq: &[McSpdTensor], p: &RecursiveParams) -> Result<Vec<RecursiveState>> {
    let first = seq.first().ok_or_else(|| invalid("recursive rollout needs T >= 1"))?;
    p.validate()?;
    p.warn_rank_deficient();
    let mut state = RecursiveState::zeros(first.channels(), p.hidden_dim());
    let mut out = Vec::with_capacity(seq.len());
    for f in seq {
        state = spd_gru_step(f, &state, p)?;
        out.push(state.clone());
    }
    Ok(out)
}

/// Final state `H_T` of the recursive layer.
pub fn spd_gru_rollout(seq: &[McSpdTensor], p: &RecursiveParams) -> Result<RecursiveState> {
    Ok(spd_gru_trajectory(seq, p)?.pop().expect("non-empty trajectory"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(w: f64, beta: f64, eps: f64) -> RecursiveParams {
        let m = Mat::from_rows(&[[w]]);
        RecursiveParams {
            channels: vec![ChannelProjections {
                w_fr: m.clone(),
                w_hr: m.clone(),
                w_fz: m.clone(),
                w_hz: m.clone(),
                w_fh: m,
            }],
            beta_r: beta,
            beta_z: beta,
            beta_h: beta,
            epsilon: eps,
            bias_mode: BiasMode::Ones,
        }
    }

    #[test]
    fn scalar_step() {
        // ε is required to be positive by validate(), but the raw step accepts 0.
        let p = scalar_params(1.0, 0.0, 0.0);
        let f = McSpdTensor::single(Mat::from_rows(&[[2.0]])).unwrap();
        let s = spd_gru_step(&f, &RecursiveState::zeros(1, 1), &p).unwrap();
        assert_eq!(s.r[0].get(0, 0), 1.0);
        assert_eq!(s.z[0].get(0, 0), 1.0);
        assert!((s.h[0].get(0, 0) - 2f64.sinh()).abs() < 1e-15);
        assert!((s.h[0].get(0, 0) - 3.62686).abs() < 1e-5);
    }

    #[test]
    fn zero_initial_state_drops_hidden_terms() {
        let w = Mat::from_fn(3, 2, |i, j| 0.3 * i as f64 - 0.2 * j as f64 + 0.5);
        let u = Mat::from_fn(2, 2, |i, j| if i == j { 1.5 } else { 0.4 });
        let p = RecursiveParams {
            channels: vec![ChannelProjections {
                w_fr: w.clone(),
                w_hr: u.clone(),
                w_fz: w.scale(0.5),
                w_hz: u.clone(),
                w_fh: w.scale(0.7),
            }],
            beta_r: 0.3,
            beta_z: 0.2,
            beta_h: 0.1,
            epsilon: 1e-3,
            bias_mode: BiasMode::Ones,
        };
        let f = Mat::from_rows(&[[2.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 1.5]]);
        let s = spd_gru_step(&McSpdTensor::single(f.clone()).unwrap(), &RecursiveState::zeros(1, 2), &p)
            .unwrap();
        let expected_r = gate_activation(
            &Mat::congruence(&f, &w).unwrap().map(|v| v + 0.09).add_identity(1e-3),
        );
        assert!(s.r[0].max_abs_diff(&expected_r) < 1e-14);
        let expected_h =
            activate_mat(&Mat::congruence(&f, &w.scale(0.7)).unwrap().map(|v| v + 0.01).add_identity(1e-3), Activation::Sinh);
        assert!(s.h[0].max_abs_diff(&expected_h) < 1e-14);
    }

    fn two_channel_free_params() -> RecursiveParams {
        let w = Mat::from_fn(3, 2, |i, j| 0.2 * i as f64 - 0.3 * j as f64 + 0.4);
        let u = Mat::from_fn(2, 2, |i, j| if i == j { 0.9 } else { 0.2 });
        RecursiveParams {
            channels: vec![ChannelProjections {
                w_fr: w.clone(),
                w_hr: u.clone(),
                w_fz: w.scale(0.6),
                w_hz: u.scale(0.8),
                w_fh: w.scale(0.5),
            }],
            beta_r: 0.3,
            beta_z: 0.4,
            beta_h: 0.2,
            epsilon: 1e-3,
            bias_mode: BiasMode::Ones,
        }
    }

    #[test]
    fn open_gate_limit_keeps_state() {
        // With zero z-projections and ε → 0 the update gate tends to J, so
        // H_t − H̃_t tends to H_{t−1}.
        let mut p = two_channel_free_params();
        let f = McSpdTensor::single(Mat::from_rows(&[[1.0, 0.2, 0.0], [0.2, 0.8, 0.1], [0.0, 0.1, 0.6]]))
            .unwrap();
        let s1 = spd_gru_step(&f, &RecursiveState::zeros(1, 2), &p).unwrap();
        p.channels[0].w_fz = Mat::zeros(3, 2);
        p.channels[0].w_hz = Mat::zeros(2, 2);
        let mut last = f64::INFINITY;
        for eps in [1e-1, 1e-3, 1e-6] {
            p.epsilon = eps;
            let s2 = spd_gru_step(&f, &s1, &p).unwrap();
            assert!(s2.z[0].max_abs_diff(&Mat::filled(2, 2, 1.0)) <= eps);
            let r = s2.r[0].clone();
            let pre_h = Mat::congruence(f.channel(0), &p.channels[0].w_fh)
                .unwrap()
                .add(&s1.h[0].mul_elem(&r).unwrap())
                .unwrap();
            let candidate = activate_mat(&p.bias_mode.add_to(&pre_h, p.bias_h()).add_identity(eps), Activation::Sinh);
            let kept = s2.h[0].sub(&candidate).unwrap();
            let gap = kept.max_abs_diff(&s1.h[0]);
            assert!(gap <= last);
            last = gap;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn ones_bias_does_not_move_gates() {
        // The gate is invariant to adding a constant to every entry.
        let mut p = two_channel_free_params();
        let f = McSpdTensor::single(Mat::identity(3)).unwrap();
        let s1 = spd_gru_step(&f, &RecursiveState::zeros(1, 2), &p).unwrap();
        let a = spd_gru_step(&f, &s1, &p).unwrap();
        p.beta_z = 5.0;
        p.beta_r = 3.0;
        let b = spd_gru_step(&f, &s1, &p).unwrap();
        assert!(a.z[0].max_abs_diff(&b.z[0]) < 1e-14);
        assert!(a.r[0].max_abs_diff(&b.r[0]) < 1e-14);
        p.bias_mode = BiasMode::Identity;
        let c = spd_gru_step(&f, &s1, &p).unwrap();
        assert!(a.z[0].max_abs_diff(&c.z[0]) > 1e-3);
    }

    #[test]
    fn empty_sequence_rejected() {
        let p = scalar_params(1.0, 0.0, 1e-3);
        assert!(spd_gru_rollout(&[], &p).is_err());
    }

    #[test]
    fn rollout_of_one_equals_step() {
        let p = scalar_params(0.8, 0.1, 1e-3);
        let f = McSpdTensor::single(Mat::from_rows(&[[1.3]])).unwrap();
        let a = spd_gru_rollout(std::slice::from_ref(&f), &p).unwrap();
        let b = spd_gru_step(&f, &RecursiveState::zeros(1, 1), &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rank_proxy() {
        assert!(column_rank_proxy(&Mat::identity(3)) > 0.99);
        let dependent = Mat::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]);
        assert!(column_rank_proxy(&dependent) < 1e-20);
        let mut p = scalar_params(0.0, 0.0, 1e-3);
        assert_eq!(p.warn_rank_deficient(), 5);
        p.channels[0].w_fr = Mat::from_rows(&[[1.0]]);
        assert_eq!(p.warn_rank_deficient(), 4);
    }

    #[test]
    fn bias_modes() {
        let x = Mat::zeros(2, 2);
        assert_eq!(BiasMode::Ones.add_to(&x, 0.5), Mat::filled(2, 2, 0.5));
        assert_eq!(BiasMode::Identity.add_to(&x, 0.5), Mat::identity(2).scale(0.5));
    }
}
