use dmt_core::eigen::{min_eigenvalue, sym_eig};
use dmt_core::layers::{
    conv2d_valid, diag_log_euclidean_distance, materialize_kernel, spd_activate, Activation, SpdKernelBank,
    spd_conv_forward,
};
use dmt_core::random::{gaussian_mat, random_spd, seeded};
use dmt_core::verify::{certify_spd, general_log_euclidean, toeplitz_conv_oracle};
use dmt_core::{hadamard, Mat, McSpdTensor};
use proptest::prelude::*;

fn spd(seed: u64, d: usize) -> Mat {
    random_spd(&mut seeded(seed), d, 1e-2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigen_reconstructs(seed in any::<u64>(), d in 1usize..10) {
        let g = gaussian_mat(&mut seeded(seed), d, d, 1.0);
        let a = g.add(&g.transpose()).unwrap();
        let e = sym_eig(&a).unwrap();
        let scaled = Mat::from_fn(d, d, |i, j| e.vectors.get(i, j) * e.values[j]);
        let back = scaled.matmul_t(&e.vectors).unwrap();
        prop_assert!(back.max_abs_diff(&a) < 1e-10 * (1.0 + a.max_abs()));
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn hadamard_of_spd_is_spd(s1 in any::<u64>(), s2 in any::<u64>(), d in 1usize..10) {
        let h = hadamard(&spd(s1, d), &spd(s2, d)).unwrap();
        prop_assert!(min_eigenvalue(&h).unwrap() > -1e-12 * h.trace());
    }

    #[test]
    fn conv_output_is_spd(seed in any::<u64>(), cin in 1usize..4, cout in 1usize..4, k in 1usize..4, extra in 0usize..8) {
        let d = k + extra;
        let mut rng = seeded(seed);
        let x = McSpdTensor::new((0..cin).map(|_| random_spd(&mut rng, d, 1e-2)).collect()).unwrap();
        let raw = (0..cin * cout).map(|_| gaussian_mat(&mut rng, k, k, 1.0)).collect();
        let bank = SpdKernelBank::new(cout, cin, k, raw, 1e-3).unwrap();
        let y = spd_conv_forward(&x, &bank).unwrap();
        prop_assert_eq!((y.channels(), y.dim()), (cout, d + 1 - k));
        prop_assert!(certify_spd(&y).pass());
    }

    #[test]
    fn conv_matches_banded_oracle(seed in any::<u64>(), k in 1usize..5, extra in 0usize..7) {
        let d = k + extra;
        let mut rng = seeded(seed);
        let x = random_spd(&mut rng, d, 1e-2);
        let w = materialize_kernel(&gaussian_mat(&mut rng, k, k, 1.0), 1e-3);
        let direct = conv2d_valid(&x, &w).unwrap();
        let oracle = toeplitz_conv_oracle(&x, &w).unwrap();
        prop_assert!(direct.max_abs_diff(&oracle) < 1e-10 * (1.0 + direct.max_abs()));
    }

    #[test]
    fn activations_are_spd(seed in any::<u64>(), d in 1usize..12, kind in 0usize..3) {
        let kind = [Activation::Exp, Activation::Sinh, Activation::Cosh][kind];
        let x = McSpdTensor::single(spd(seed, d)).unwrap();
        prop_assert!(certify_spd(&spd_activate(&x, kind)).pass());
    }

    #[test]
    fn diag_distance_is_a_metric(a in prop::collection::vec(-3.0f64..3.0, 1..20), seed in any::<u64>()) {
        let n = a.len();
        let mut rng = seeded(seed);
        let p: Vec<f64> = a.iter().map(|v| v.exp()).collect();
        let q: Vec<f64> = gaussian_mat(&mut rng, 1, n, 1.0).data().iter().map(|v| v.exp()).collect();
        let r: Vec<f64> = gaussian_mat(&mut rng, 1, n, 1.0).data().iter().map(|v| v.exp()).collect();
        let d = |x: &[f64], y: &[f64]| diag_log_euclidean_distance(x, y).unwrap();
        prop_assert_eq!(d(&p, &p), 0.0);
        prop_assert_eq!(d(&p, &q), d(&q, &p));
        prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-12);
        let slow = general_log_euclidean(&Mat::diag(&p), &Mat::diag(&q)).unwrap();
        prop_assert!((slow - d(&p, &q)).abs() < 1e-9);
    }
}

#[test]
fn diag_distance_rejects_non_positive() {
    assert!(diag_log_euclidean_distance(&[1.0, 0.0], &[1.0, 1.0]).is_err());
    assert!(diag_log_euclidean_distance(&[1.0], &[1.0, 1.0]).is_err());
}
