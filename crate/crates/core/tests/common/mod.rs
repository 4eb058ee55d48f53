#![allow(dead_code)]

use dmt_core::data::{generate_synthetic, Centering, SkeletonSequence, SpdSample, SyntheticConfig};
use dmt_core::model::{Ablation, ConvSpec, ModelConfig};
use dmt_core::random::seeded;
use dmt_core::train::prepare_eval;

/// D=8, T=4 network small enough for per-coordinate checks.
pub fn small_model(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        joints: 8,
        conv: vec![
            ConvSpec {
                out_channels: 2,
                in_channels: 1,
                kernel: 2,
            },
            ConvSpec {
                out_channels: 2,
                in_channels: 2,
                kernel: 2,
            },
        ],
        hidden_dim: 4,
        fc_units: 16,
        subclips: 4,
        euclid_channels: 4,
        euclid_kernel: 2,
        euclid_hidden: 5,
        ablation,
        ..Default::default()
    }
}

pub fn small_data(per_class: usize, seed: u64) -> Vec<SkeletonSequence> {
    let cfg = SyntheticConfig {
        joints: 8,
        per_class,
        frames: 20,
        ..Default::default()
    };
    generate_synthetic(&cfg, &mut seeded(seed)).unwrap()
}

pub fn samples(seqs: &[SkeletonSequence], subclips: usize) -> Vec<SpdSample> {
    prepare_eval(seqs, subclips, Centering::Mean).unwrap()
}
