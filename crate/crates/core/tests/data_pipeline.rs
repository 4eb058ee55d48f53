use dmt_core::data::{
    class_margins, extract_spd_features, generate_synthetic, load_skeleton_file, parse_skeletons,
    pre_ridge_descriptors, prepare_sample, rotate, rotation_matrix, save_skeleton_file, scale, Centering,
    SyntheticConfig,
};
use dmt_core::random::{seeded, DmtRng};
use dmt_core::verify::certify_spd;
use proptest::prelude::*;

#[test]
fn generated_file_round_trips() {
    let cfg = SyntheticConfig::default();
    let seqs = generate_synthetic(&cfg, &mut seeded(12)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.skel");
    save_skeleton_file(&path, &seqs).unwrap();
    let back = load_skeleton_file(&path).unwrap();
    assert_eq!(back.sequences, seqs);
    assert!(back.rejected.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("seq ")).count(), 120);
}

#[test]
fn malformed_record_is_skipped_with_line_number() {
    let text = "spdnet-skel v1 1\nseq 0 0 1\n1 2 3\nseq 1 0 2\n1 2\n4 5 6\nseq 2 1 1\n7 8 9\n";
    let f = parse_skeletons(text).unwrap();
    assert_eq!(f.sequences.len(), 2);
    assert_eq!(f.sequences[1].label, 2);
    assert_eq!(f.rejected.len(), 1);
    assert_eq!(f.rejected[0].line, 5);
}

#[test]
fn short_sequences_repeat_to_the_subclip_count() {
    let cfg = SyntheticConfig {
        frames: 5,
        per_class: 1,
        ..Default::default()
    };
    let seq = &generate_synthetic(&cfg, &mut seeded(1)).unwrap()[0];
    let s = prepare_sample(seq, 12, Centering::Mean, None::<&mut DmtRng>).unwrap();
    assert_eq!(s.subclips(), 12);
    assert_eq!(s.descriptors[0], s.descriptors[5]);
}

#[test]
fn features_are_spd_and_classes_separate() {
    let seqs = generate_synthetic(&SyntheticConfig::default(), &mut seeded(3)).unwrap();
    assert!(class_margins(&seqs, 3) > 1.0);
    for s in seqs.iter().step_by(13) {
        for d in extract_spd_features(s, Centering::Mean).descriptors {
            assert!(certify_spd(&d).pass());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scaling_multiplies_descriptors_by_s_squared(seed in any::<u64>(), s in 0.2f64..5.0) {
        let cfg = SyntheticConfig { per_class: 1, frames: 12, ..Default::default() };
        let seq = &generate_synthetic(&cfg, &mut seeded(seed)).unwrap()[0];
        for centering in [Centering::Mean, Centering::Sum] {
            let a = pre_ridge_descriptors(seq, centering);
            let b = pre_ridge_descriptors(&scale(seq, s), centering);
            for (x, y) in a.iter().zip(&b) {
                let expect = x.scale(s * s);
                prop_assert!(y.max_abs_diff(&expect) <= 1e-12 * expect.max_abs());
            }
        }
    }

    #[test]
    fn rotation_preserves_descriptors(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
        let cfg = SyntheticConfig { per_class: 1, frames: 12, ..Default::default() };
        let seq = &generate_synthetic(&cfg, &mut seeded(seed)).unwrap()[0];
        let r = rotation_matrix(a, b, c);
        let before = pre_ridge_descriptors(seq, Centering::Mean);
        let after = pre_ridge_descriptors(&rotate(seq, &r), Centering::Mean);
        for (x, y) in before.iter().zip(&after) {
            prop_assert!(x.max_abs_diff(y) <= 1e-12 * (1.0 + x.max_abs()));
        }
    }
}
