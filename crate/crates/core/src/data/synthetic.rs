//! Procedural labeled actions for desk-scale training.
//!
//! Class `k` moves limb `k % 4` with motion family `k % 3` (oscillation, linear
//! sweep, circle). Every sample jitters amplitude, phase, frequency and body size and
//! adds Gaussian sensor noise to all joints.

use std::f64::consts::{FRAC_PI_4, TAU};

use rand::Rng;

use super::skeleton::SkeletonSequence;
use crate::error::{invalid, Result};
use crate::random::gaussian;
use crate::tensor::Mat;

/// Per-sample phase offsets are drawn from `±PHASE_JITTER` radians.
pub const PHASE_JITTER: f64 = FRAC_PI_4;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub per_class: usize,
    pub joints: usize,
    pub frames: usize,
    /// Standard deviation of the per-coordinate sensor noise.
    pub noise: f64,
    /// Number of distinct subject ids cycled through.
    pub subjects: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            per_class: 40,
            joints: 15,
            frames: 60,
            noise: 0.01,
            subjects: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionFamily {
    Oscillation,
    LinearSweep,
    Circle,
}

impl MotionFamily {
    pub fn of_class(k: usize) -> Self {
        match k % 3 {
            0 => MotionFamily::Oscillation,
            1 => MotionFamily::LinearSweep,
            _ => MotionFamily::Circle,
        }
    }
}

/// Neutral standing pose. Fifteen joints follow the usual Kinect layout
/// (head, neck, torso, then left/right arm and leg chains); other counts get a
/// deterministic spiral of points.
pub fn base_pose(joints: usize) -> Mat {
    if joints == 15 {
        return Mat::from_rows(&[
            [0.0, 1.70, 0.0],
            [0.0, 1.50, 0.0],
            [0.0, 1.20, 0.0],
            [-0.20, 1.45, 0.0],
            [-0.45, 1.45, 0.0],
            [-0.70, 1.45, 0.0],
            [0.20, 1.45, 0.0],
            [0.45, 1.45, 0.0],
            [0.70, 1.45, 0.0],
            [-0.10, 0.95, 0.0],
            [-0.12, 0.50, 0.0],
            [-0.12, 0.05, 0.0],
            [0.10, 0.95, 0.0],
            [0.12, 0.50, 0.0],
            [0.12, 0.05, 0.0],
        ]);
    }
    Mat::from_fn(joints, 3, |j, c| {
        let a = j as f64 * 0.9;
        match c {
            0 => 0.4 * a.cos(),
            1 => 1.7 * (1.0 - j as f64 / joints as f64),
            _ => 0.4 * a.sin(),
        }
    })
}

/// Joints driven by limb `limb` (0..4) with their lever weights.
pub fn limb_joints(joints: usize, limb: usize) -> Vec<(usize, f64)> {
    if joints == 15 {
        let chain = [[4, 5], [7, 8], [10, 11], [13, 14]][limb % 4];
        return vec![(chain[0], 0.5), (chain[1], 1.0)];
    }
    let chunk = (joints / 4).max(1);
    let start = (limb % 4) * chunk % joints;
    let end = (start + chunk).min(joints);
    (start..end)
        .map(|j| (j, (j - start + 1) as f64 / (end - start) as f64))
        .collect()
}

/// Unit direction of motion for limb `limb`; arms move mostly in the frontal plane,
/// legs mostly forward.
fn limb_axes(limb: usize) -> ([f64; 3], [f64; 3]) {
    match limb % 4 {
        0 => ([0.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
        1 => ([0.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
        2 => ([0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
        _ => ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
    }
}

/// Limb displacement scale of family `f` at normalized time `u ∈ [0, 1]`, projected on
/// the two limb axes.
fn family_offset(f: MotionFamily, u: f64, amp: f64, freq: f64, phase: f64) -> (f64, f64) {
    match f {
        MotionFamily::Oscillation => (amp * (TAU * freq * u + phase).sin(), 0.0),
        MotionFamily::LinearSweep => (amp * (2.0 * u - 1.0), 0.0),
        MotionFamily::Circle => {
            let a = TAU * freq * u + phase;
            (amp * a.cos(), amp * a.sin())
        }
    }
}

fn one_sequence<R: Rng + ?Sized>(cfg: &SyntheticConfig, class: usize, index: usize, rng: &mut R) -> Result<SkeletonSequence> {
    let body = rng.gen_range(0.9..=1.1);
    let amp = 0.35 * rng.gen_range(0.8..=1.2);
    let freq = rng.gen_range(0.8..=1.2);
    let phase = rng.gen_range(-PHASE_JITTER..=PHASE_JITTER);
    let base = base_pose(cfg.joints).scale(body);
    let family = MotionFamily::of_class(class);
    let limb = limb_joints(cfg.joints, class % 4);
    let (ax1, ax2) = limb_axes(class % 4);
    let mut frames = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let u = if cfg.frames > 1 {
            t as f64 / (cfg.frames - 1) as f64
        } else {
            0.0
        };
        let (a, b) = family_offset(family, u, amp, freq, phase);
        let mut f = base.clone();
        for &(j, w) in &limb {
            for c in 0..3 {
                f.set(j, c, f.get(j, c) + w * (a * ax1[c] + b * ax2[c]));
            }
        }
        for v in f.data_mut() {
            *v += cfg.noise * gaussian(rng);
        }
        frames.push(f);
    }
    SkeletonSequence::new(frames, class, index % cfg.subjects.max(1))
}

/// `cfg.classes × cfg.per_class` sequences in class-major order. Deterministic for a
/// given rng state.
pub fn generate_synthetic<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Result<Vec<SkeletonSequence>> {
    if cfg.classes < 2 {
        return Err(invalid("synthetic data needs at least 2 classes"));
    }
    if cfg.joints < 3 || cfg.frames == 0 || cfg.per_class == 0 {
        return Err(invalid("synthetic data needs joints >= 3, frames >= 1, per_class >= 1"));
    }
    let mut out = Vec::with_capacity(cfg.classes * cfg.per_class);
    for class in 0..cfg.classes {
        for i in 0..cfg.per_class {
            out.push(one_sequence(cfg, class, i, rng)?);
        }
    }
    Ok(out)
}

/// Minimum pairwise L2 distance between class-mean trajectories of the
/// mean-centered coordinates. Classes with no samples are skipped.
pub fn class_margins(data: &[SkeletonSequence], classes: usize) -> f64 {
    let mut sums: Vec<Option<(Vec<f64>, usize)>> = vec![None; classes];
    for seq in data {
        let mean = super::features::reference_pose(seq, super::features::Centering::Mean);
        let flat: Vec<f64> = seq
            .frames
            .iter()
            .flat_map(|f| f.sub(&mean).expect("same shape").data().to_vec())
            .collect();
        let slot = &mut sums[seq.label];
        match slot {
            Some((acc, n)) if acc.len() == flat.len() => {
                acc.iter_mut().zip(&flat).for_each(|(a, b)| *a += b);
                *n += 1;
            }
            Some(_) => {}
            None => *slot = Some((flat, 1)),
        }
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .flatten()
        .map(|(acc, n)| acc.into_iter().map(|v| v / n as f64).collect())
        .collect();
    let mut best = f64::INFINITY;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let d = means[i]
                .iter()
                .zip(&means[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::seeded;

    #[test]
    fn same_seed_same_data() {
        let cfg = SyntheticConfig::default();
        let a = generate_synthetic(&cfg, &mut seeded(3)).unwrap();
        let b = generate_synthetic(&cfg, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 120);
        assert_eq!(a[0].frames[0].shape(), (15, 3));
        assert_eq!(a[0].len(), 60);
    }

    #[test]
    fn classes_are_separated() {
        let cfg = SyntheticConfig::default();
        let data = generate_synthetic(&cfg, &mut seeded(4)).unwrap();
        let m = class_margins(&data, 3);
        assert!(m > 1.0, "margin {m}");
    }

    #[test]
    fn other_joint_counts() {
        let cfg = SyntheticConfig {
            joints: 8,
            classes: 4,
            per_class: 2,
            frames: 10,
            ..Default::default()
        };
        let data = generate_synthetic(&cfg, &mut seeded(5)).unwrap();
        assert_eq!(data[7].joints(), 8);
        assert_eq!(data[7].label, 3);
    }

    #[test]
    fn needs_two_classes() {
        let cfg = SyntheticConfig {
            classes: 1,
            ..Default::default()
        };
        assert!(generate_synthetic(&cfg, &mut seeded(0)).is_err());
    }
}
