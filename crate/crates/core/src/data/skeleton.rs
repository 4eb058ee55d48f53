//! Skeleton sequences and the preprocessing steps applied before feature extraction:
//! temporal downsampling, random scaling and random rotation.

use rand::Rng;

use crate::error::{invalid, DmtError, Result};
use crate::tensor::Mat;

/// One action: `frames[t]` is an `N_j × 3` matrix of joint coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Vec<Mat>,
    pub label: usize,
    pub subject: usize,
}

impl SkeletonSequence {
    pub fn new(frames: Vec<Mat>, label: usize, subject: usize) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| invalid("a skeleton sequence needs at least one frame"))?;
        let joints = first.rows();
        for f in &frames {
            if f.shape() != (joints, 3) {
                return Err(DmtError::Shape {
                    op: "SkeletonSequence::new",
                    left: (joints, 3),
                    right: f.shape(),
                });
            }
            if !f.is_finite() {
                return Err(invalid("non-finite joint coordinate"));
            }
        }
        Ok(Self {
            frames,
            label,
            subject,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.frames[0].rows()
    }

    fn with_frames(&self, frames: Vec<Mat>) -> Self {
        Self {
            frames,
            label: self.label,
            subject: self.subject,
        }
    }
}

/// How one frame is chosen from each temporal segment.
pub enum FramePick<'a, R: Rng + ?Sized> {
    /// Uniform draw inside the segment (training).
    Random(&'a mut R),
    /// Middle frame `start + (len − 1) / 2` (evaluation).
    Middle,
}

/// Segment boundaries `(start, len)` splitting `total` frames into `parts` contiguous
/// near-equal pieces; the first `total % parts` pieces are one frame longer.
pub fn segments(total: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = total / parts;
    let extra = total % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let len = base + usize::from(i < extra);
        out.push((start, len));
        start += len;
    }
    out
}

/// Frame indices selected by [`downsample`].
pub fn downsample_indices<R: Rng + ?Sized>(total: usize, target: usize, pick: FramePick<'_, R>) -> Result<Vec<usize>> {
    if target == 0 {
        return Err(invalid("downsampling target must be at least 1"));
    }
    if total == 0 {
        return Err(invalid("cannot downsample an empty sequence"));
    }
    if total < target {
        log::warn!("sequence has {total} frames, fewer than {target}; repeating frames cyclically");
        return Ok((0..target).map(|i| i % total).collect());
    }
    let segs = segments(total, target);
    Ok(match pick {
        FramePick::Middle => segs.iter().map(|(s, l)| s + (l - 1) / 2).collect(),
        FramePick::Random(rng) => segs.iter().map(|(s, l)| s + rng.gen_range(0..*l)).collect(),
    })
}

/// Reduces a sequence to `target` frames, one per temporal segment.
pub fn downsample<R: Rng + ?Sized>(seq: &SkeletonSequence, target: usize, pick: FramePick<'_, R>) -> Result<SkeletonSequence> {
    let idx = downsample_indices(seq.len(), target, pick)?;
    Ok(seq.with_frames(idx.into_iter().map(|i| seq.frames[i].clone()).collect()))
}

/// Lower and upper bound of the random scale factor.
pub const SCALE_RANGE: (f64, f64) = (0.95, 1.05);
/// Rotation angles are drawn from `[−MAX_ROTATION_DEG, MAX_ROTATION_DEG]` per axis.
pub const MAX_ROTATION_DEG: f64 = 45.0;

pub fn scale(seq: &SkeletonSequence, s: f64) -> SkeletonSequence {
    seq.with_frames(seq.frames.iter().map(|f| f.scale(s)).collect())
}

/// Multiplies every coordinate by one factor drawn from [`SCALE_RANGE`]. Returns the factor.
pub fn random_scale<R: Rng + ?Sized>(seq: &SkeletonSequence, rng: &mut R) -> (SkeletonSequence, f64) {
    let s = rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1);
    (scale(seq, s), s)
}

/// `R = R_z(γ) · R_y(β) · R_x(α)`, angles in radians, right-handed and counter-clockwise,
/// so a positive angle about `z` turns `+x` toward `+y`.
pub fn rotation_matrix(alpha: f64, beta: f64, gamma: f64) -> Mat {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    let rx = Mat::from_rows(&[[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]]);
    let ry = Mat::from_rows(&[[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]]);
    let rz = Mat::from_rows(&[[cg, -sg, 0.0], [sg, cg, 0.0], [0.0, 0.0, 1.0]]);
    rz.matmul(&ry).and_then(|m| m.matmul(&rx)).expect("3x3")
}

/// Applies `R` to every joint (`p ↦ R p`).
pub fn rotate(seq: &SkeletonSequence, r: &Mat) -> SkeletonSequence {
    seq.with_frames(
        seq.frames
            .iter()
            .map(|f| f.matmul_t(r).expect("frames are N x 3"))
            .collect(),
    )
}

/// Rotates about x, y and z by independent uniform angles in ±[`MAX_ROTATION_DEG`].
/// Returns the rotated sequence and the angles in radians.
pub fn random_rotate<R: Rng + ?Sized>(seq: &SkeletonSequence, rng: &mut R) -> (SkeletonSequence, [f64; 3]) {
    let lim = MAX_ROTATION_DEG.to_radians();
    let angles = [
        rng.gen_range(-lim..=lim),
        rng.gen_range(-lim..=lim),
        rng.gen_range(-lim..=lim),
    ];
    let r = rotation_matrix(angles[0], angles[1], angles[2]);
    (rotate(seq, &r), angles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::seeded;

    fn seq_of(len: usize, joints: usize) -> SkeletonSequence {
        let frames = (0..len)
            .map(|t| Mat::from_fn(joints, 3, |j, c| (t * 100 + j * 3 + c) as f64 * 0.01))
            .collect();
        SkeletonSequence::new(frames, 0, 0).unwrap()
    }

    #[test]
    fn middle_downsampling_indices() {
        let idx = downsample_indices::<crate::random::DmtRng>(24, 12, FramePick::Middle).unwrap();
        assert_eq!(idx, (0..12).map(|i| 2 * i).collect::<Vec<_>>());
        let idx = downsample_indices::<crate::random::DmtRng>(12, 12, FramePick::Middle).unwrap();
        assert_eq!(idx, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn short_sequences_repeat() {
        let idx = downsample_indices::<crate::random::DmtRng>(5, 12, FramePick::Middle).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0, 1]);
    }

    #[test]
    fn segments_spread_remainder() {
        assert_eq!(segments(14, 4), vec![(0, 4), (4, 4), (8, 3), (11, 3)]);
        let mut rng = seeded(9);
        for _ in 0..50 {
            let idx = downsample_indices(14, 4, FramePick::Random(&mut rng)).unwrap();
            for (i, (s, l)) in idx.iter().zip(segments(14, 4)) {
                assert!(*i >= s && *i < s + l);
            }
        }
    }

    #[test]
    fn downsample_keeps_metadata() {
        let mut seq = seq_of(30, 4);
        seq.label = 2;
        seq.subject = 7;
        let d = downsample::<crate::random::DmtRng>(&seq, 12, FramePick::Middle).unwrap();
        assert_eq!((d.len(), d.label, d.subject), (12, 2, 7));
    }

    #[test]
    fn scale_examples() {
        let seq = SkeletonSequence::new(vec![Mat::filled(3, 3, 1.0)], 0, 0).unwrap();
        assert_eq!(scale(&seq, 1.0), seq);
        assert_eq!(scale(&seq, 1.05).frames[0], Mat::filled(3, 3, 1.05));
        let mut rng = seeded(1);
        for _ in 0..100 {
            let (_, s) = random_scale(&seq, &mut rng);
            assert!((SCALE_RANGE.0..=SCALE_RANGE.1).contains(&s));
        }
    }

    #[test]
    fn rotation_examples() {
        assert!(rotation_matrix(0.0, 0.0, 0.0).max_abs_diff(&Mat::identity(3)) == 0.0);
        let seq = SkeletonSequence::new(vec![Mat::from_rows(&[[1.0, 0.0, 0.0]])], 0, 0).unwrap();
        let r = rotation_matrix(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let out = rotate(&seq, &r);
        assert!(out.frames[0].max_abs_diff(&Mat::from_rows(&[[0.0, 1.0, 0.0]])) < 1e-15);
    }

    #[test]
    fn random_rotation_is_isometry() {
        let seq = seq_of(3, 6);
        let mut rng = seeded(4);
        let (rot, angles) = random_rotate(&seq, &mut rng);
        assert!(angles.iter().all(|a| a.abs() <= MAX_ROTATION_DEG.to_radians()));
        for (a, b) in seq.frames.iter().zip(&rot.frames) {
            for i in 0..6 {
                for j in 0..6 {
                    let d = |m: &Mat| {
                        (0..3)
                            .map(|c| (m.get(i, c) - m.get(j, c)).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    };
                    assert!((d(a) - d(b)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_sequences() {
        assert!(SkeletonSequence::new(vec![], 0, 0).is_err());
        assert!(SkeletonSequence::new(vec![Mat::zeros(3, 3), Mat::zeros(4, 3)], 0, 0).is_err());
        assert!(SkeletonSequence::new(vec![Mat::filled(2, 3, f64::NAN)], 0, 0).is_err());
    }
}
