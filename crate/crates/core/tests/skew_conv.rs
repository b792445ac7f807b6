use eqflow::rng;
use eqflow::training_free::{conv_to_dense, ConvKernel};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constrained_kernels_densify_to_skew_matrices(c in 1usize..=3, r in 0usize..=2, dh in 0usize..4, dw in 0usize..4, seed: u64) {
        let (h, w) = (2 * r + 1 + dh, 2 * r + 1 + dw);
        let k = ConvKernel::random_skew(c, r, &mut rng::seeded(seed));
        prop_assert!(k.is_skew());
        let m = conv_to_dense(&k, h, w).unwrap();
        prop_assert_eq!(m.nrows(), c * h * w);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                prop_assert_eq!(m[[i, j]], -m[[j, i]]);
            }
        }
    }

    #[test]
    fn dense_form_matches_convolution(c in 1usize..=3, r in 0usize..=2, seed: u64) {
        let (h, w) = (2 * r + 2, 2 * r + 3);
        let mut g = rng::seeded(seed);
        let k = ConvKernel::random(c, r, &mut g);
        let s = rng::normal_vec(&mut g, c * h * w);
        let mut out = vec![0.0; s.len()];
        k.apply(&s, h, w, &mut out);
        let dense = conv_to_dense(&k, h, w).unwrap().dot(&ndarray::Array1::from(s));
        for (a, b) in out.iter().zip(&dense) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
