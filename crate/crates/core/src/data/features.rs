//! Per-frame SPD descriptors `(x_t − x̄)(x_t − x̄)ᵀ + λI`.

use rand::Rng;

use super::skeleton::{downsample, random_rotate, random_scale, FramePick, SkeletonSequence};
use crate::error::Result;
use crate::tensor::{Mat, McSpdTensor};

/// Relative ridge `λ = RIDGE_REL · trace / N_j`.
pub const RIDGE_REL: f64 = 1e-3;
/// Lower bound on the ridge.
pub const RIDGE_FLOOR: f64 = 1e-6;

/// How the reference pose `x̄` is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    /// `x̄ = (1/T) Σ x_t`.
    Mean,
    /// `x̄ = Σ x_t` with no normalization.
    Sum,
}

/// Network input for one action.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdSample {
    /// One single-channel `N_j × N_j` descriptor per subclip.
    pub descriptors: Vec<McSpdTensor>,
    /// `T × 3N_j` centered joint coordinates, row `t` being `flatten(x_t − x̄)`.
    pub coords: Mat,
    pub label: usize,
}

impl SpdSample {
    pub fn subclips(&self) -> usize {
        self.descriptors.len()
    }

    pub fn dim(&self) -> usize {
        self.descriptors[0].dim()
    }
}

/// The reference pose `x̄` over all frames of the sequence.
pub fn reference_pose(seq: &SkeletonSequence, centering: Centering) -> Mat {
    let mut acc = Mat::zeros(seq.joints(), 3);
    for f in &seq.frames {
        acc.add_assign(f).expect("frames share a shape");
    }
    match centering {
        Centering::Mean => acc.scale(1.0 / seq.len() as f64),
        Centering::Sum => acc,
    }
}

/// `(x_t − x̄)(x_t − x̄)ᵀ` for every frame, before the ridge. Each has rank at most 3.
pub fn pre_ridge_descriptors(seq: &SkeletonSequence, centering: Centering) -> Vec<Mat> {
    let mean = reference_pose(seq, centering);
    seq.frames
        .iter()
        .map(|f| {
            let c = f.sub(&mean).expect("frames share a shape");
            c.matmul_t(&c).expect("N x 3 times 3 x N").symmetrize()
        })
        .collect()
}

pub fn ridge_for(pre: &Mat) -> f64 {
    (RIDGE_REL * pre.trace() / pre.rows() as f64).max(RIDGE_FLOOR)
}

/// Descriptors for every frame of `seq` (one subclip per frame) plus centered coordinates.
pub fn extract_spd_features(seq: &SkeletonSequence, centering: Centering) -> SpdSample {
    let mean = reference_pose(seq, centering);
    let joints = seq.joints();
    let mut coords = Mat::zeros(seq.len(), 3 * joints);
    let mut descriptors = Vec::with_capacity(seq.len());
    for (t, f) in seq.frames.iter().enumerate() {
        let c = f.sub(&mean).expect("frames share a shape");
        coords.data_mut()[t * 3 * joints..(t + 1) * 3 * joints].copy_from_slice(c.data());
        let pre = c.matmul_t(&c).expect("N x 3 times 3 x N").symmetrize();
        let lambda = ridge_for(&pre);
        descriptors.push(McSpdTensor::from_parts(joints, vec![pre.add_identity(lambda)]));
    }
    SpdSample {
        descriptors,
        coords,
        label: seq.label,
    }
}

/// Full preprocessing for one sequence. With `rng` (training) frames are drawn at
/// random inside each segment and the skeleton is randomly scaled and rotated;
/// without it (evaluation) the middle frame of each segment is used unchanged.
pub fn prepare_sample<R: Rng + ?Sized>(
    seq: &SkeletonSequence,
    subclips: usize,
    centering: Centering,
    rng: Option<&mut R>,
) -> Result<SpdSample> {
    let seq = match rng {
        Some(rng) => {
            let d = downsample(seq, subclips, FramePick::Random(&mut *rng))?;
            let (d, _) = random_scale(&d, rng);
            random_rotate(&d, rng).0
        }
        None => downsample::<R>(seq, subclips, FramePick::Middle)?,
    };
    Ok(extract_spd_features(&seq, centering))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::skeleton::{rotate, rotation_matrix, scale};
    use crate::random::{gaussian_mat, seeded};
    use crate::verify::certify_spd;

    fn random_seq(seed: u64, frames: usize, joints: usize) -> SkeletonSequence {
        let mut rng = seeded(seed);
        SkeletonSequence::new(
            (0..frames).map(|_| gaussian_mat(&mut rng, joints, 3, 0.3)).collect(),
            1,
            0,
        )
        .unwrap()
    }

    #[test]
    fn identical_frames_give_ridge_only() {
        let f = Mat::from_fn(5, 3, |i, j| (i + j) as f64);
        let seq = SkeletonSequence::new(vec![f; 4], 0, 0).unwrap();
        let s = extract_spd_features(&seq, Centering::Mean);
        for d in &s.descriptors {
            assert_eq!(d.channel(0), &Mat::identity(5).scale(RIDGE_FLOOR));
        }
    }

    #[test]
    fn single_axis_displacement() {
        // Joint 1 moves ±c along y; every other joint is static.
        let c = 0.4;
        let base = Mat::from_fn(3, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        let mut up = base.clone();
        up.set(1, 1, base.get(1, 1) + c);
        let mut down = base.clone();
        down.set(1, 1, base.get(1, 1) - c);
        let seq = SkeletonSequence::new(vec![up, down], 0, 0).unwrap();
        let s = extract_spd_features(&seq, Centering::Mean);
        let lambda = (RIDGE_REL * c * c / 3.0).max(RIDGE_FLOOR);
        let mut expected = Mat::identity(3).scale(lambda);
        expected.set(1, 1, expected.get(1, 1) + c * c);
        for d in &s.descriptors {
            assert!(d.channel(0).max_abs_diff(&expected) < 1e-15);
        }
    }

    #[test]
    fn pre_ridge_rank_at_most_three() {
        let seq = random_seq(2, 6, 10);
        for m in pre_ridge_descriptors(&seq, Centering::Mean) {
            let pair = crate::eigen::sym_eig(&m).unwrap();
            let tiny = pair.values.iter().filter(|v| v.abs() < 1e-12 * m.trace()).count();
            assert!(tiny >= 7);
        }
    }

    #[test]
    fn descriptors_are_spd() {
        let seq = random_seq(3, 12, 15);
        let s = extract_spd_features(&seq, Centering::Mean);
        assert_eq!(s.coords.shape(), (12, 45));
        for d in &s.descriptors {
            let r = certify_spd(d);
            assert!(r.pass() && r.channels[0].min_eigenvalue > 0.0);
        }
    }

    #[test]
    fn scaling_is_quadratic() {
        let seq = random_seq(5, 8, 7);
        let s = 1.037;
        let a = pre_ridge_descriptors(&seq, Centering::Mean);
        let b = pre_ridge_descriptors(&scale(&seq, s), Centering::Mean);
        for (x, y) in a.iter().zip(&b) {
            assert!(y.max_abs_diff(&x.scale(s * s)) <= 1e-12 * x.max_abs());
        }
    }

    #[test]
    fn rotation_preserves_pre_ridge_descriptors() {
        // Rows of x_t − x̄ are rotated; their Gram matrix is unchanged.
        let seq = random_seq(6, 5, 6);
        let r = rotation_matrix(0.3, -0.5, 0.7);
        let a = pre_ridge_descriptors(&seq, Centering::Mean);
        let b = pre_ridge_descriptors(&rotate(&seq, &r), Centering::Mean);
        for (x, y) in a.iter().zip(&b) {
            assert!(y.max_abs_diff(x) <= 1e-12 * x.max_abs());
        }
    }

    #[test]
    fn literal_sum_centering() {
        let seq = random_seq(8, 3, 4);
        let mean = reference_pose(&seq, Centering::Mean);
        let sum = reference_pose(&seq, Centering::Sum);
        assert!(sum.max_abs_diff(&mean.scale(3.0)) < 1e-14);
    }

    #[test]
    fn prepare_is_deterministic() {
        let seq = random_seq(9, 40, 15);
        let a = prepare_sample(&seq, 12, Centering::Mean, Some(&mut seeded(1))).unwrap();
        let b = prepare_sample(&seq, 12, Centering::Mean, Some(&mut seeded(1))).unwrap();
        assert_eq!(a, b);
        let e = prepare_sample::<crate::random::DmtRng>(&seq, 12, Centering::Mean, None).unwrap();
        assert_eq!(e.subclips(), 12);
    }
}
