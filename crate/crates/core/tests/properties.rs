mod common;

use std::collections::BTreeMap;

use approx::assert_relative_eq;
use carnot_core::algebra::nilpotentize;
use carnot_core::metrics::d2_raw;
use carnot_core::{CarnotGroup, GradedNilpotentAlgebra};
use common::{engel_matrix_bracket, heisenberg_matrix_product, max_abs_diff};
use proptest::prelude::*;

fn groups() -> Vec<CarnotGroup> {
    [
        GradedNilpotentAlgebra::heisenberg(1),
        GradedNilpotentAlgebra::heisenberg(2),
        GradedNilpotentAlgebra::engel(),
    ]
    .into_iter()
    .map(|a| CarnotGroup::new(a).unwrap())
    .collect()
}

fn coords(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

fn scale(v: &[f64]) -> f64 {
    1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn product_is_associative(g in 0usize..3, seed in coords(15)) {
        let group = &groups()[g];
        let n = group.dim();
        let (x, y, z) = (&seed[..n], &seed[5..5 + n], &seed[10..10 + n]);
        let left = group.product_vec(&group.product_vec(x, y), z);
        let right = group.product_vec(x, &group.product_vec(y, z));
        prop_assert!(max_abs_diff(&left, &right) <= 1e-12 * scale(&left));
    }

    #[test]
    fn dilation_is_a_homomorphism(g in 0usize..3, seed in coords(10), r in 0.05f64..3.0) {
        let group = &groups()[g];
        let n = group.dim();
        let (x, y) = (&seed[..n], &seed[5..5 + n]);
        let left = group.dilate_vec(&group.product_vec(x, y), r);
        let right = group.product_vec(&group.dilate_vec(x, r), &group.dilate_vec(y, r));
        prop_assert!(max_abs_diff(&left, &right) <= 1e-12 * scale(&left));
    }

    #[test]
    fn d2_is_symmetric_left_invariant_and_homogeneous(
        g in 0usize..3,
        seed in coords(15),
        r in 0.05f64..3.0,
    ) {
        let group = &groups()[g];
        let n = group.dim();
        let (x, y, z) = (&seed[..n], &seed[5..5 + n], &seed[10..10 + n]);
        let d = d2_raw(group, x, y);
        assert_relative_eq!(d, d2_raw(group, y, x), max_relative = 1e-9, epsilon = 1e-12);
        let (zx, zy) = (group.product_vec(z, x), group.product_vec(z, y));
        assert_relative_eq!(d, d2_raw(group, &zx, &zy), max_relative = 1e-9, epsilon = 1e-12);
        let (rx, ry) = (group.dilate_vec(x, r), group.dilate_vec(y, r));
        assert_relative_eq!(r * d, d2_raw(group, &rx, &ry), max_relative = 1e-9, epsilon = 1e-12);
    }

    #[test]
    fn bracket_satisfies_jacobi(g in 0usize..3, seed in coords(15)) {
        let alg = groups()[g].algebra().clone();
        let n = alg.dim();
        let (x, y, z) = (&seed[..n], &seed[5..5 + n], &seed[10..10 + n]);
        let terms = [
            alg.bracket(x, &alg.bracket(y, z)),
            alg.bracket(y, &alg.bracket(z, x)),
            alg.bracket(z, &alg.bracket(x, y)),
        ];
        for i in 0..n {
            prop_assert!((terms[0][i] + terms[1][i] + terms[2][i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn engel_bracket_matches_matrices(seed in coords(8)) {
        let alg = GradedNilpotentAlgebra::engel();
        let (x, y) = (&seed[..4], &seed[4..]);
        prop_assert!(max_abs_diff(&alg.bracket(x, y), &engel_matrix_bracket(x, y)) <= 1e-12);
    }

    #[test]
    fn heisenberg_product_matches_matrices(seed in coords(6)) {
        let group = &groups()[0];
        let (x, y) = (&seed[..3], &seed[3..]);
        prop_assert!(max_abs_diff(&group.product_vec(x, y), &heisenberg_matrix_product(x, y)) <= 1e-12);
    }

    #[test]
    fn nilpotentize_keeps_graded_part(
        a in 0.5f64..2.0,
        b in 0.5f64..2.0,
        c in -2.0f64..2.0,
        lower in -1.0f64..1.0,
    ) {
        // Engel degrees with an extra lower-order term [X1, X2] ∋ X1
        let degrees = [1, 1, 2, 3];
        let mut raw = BTreeMap::new();
        for (i, j, k, v) in [(0, 1, 2, a), (0, 2, 3, b), (1, 2, 3, c), (0, 1, 0, lower)] {
            raw.insert((i, j, k), v);
            raw.insert((j, i, k), -v);
        }
        let alg = nilpotentize(&raw, &degrees).unwrap();
        prop_assert!(alg.validate().is_valid());
        prop_assert_eq!(alg.structure_constant(0, 1, 0), 0.0);
        prop_assert_eq!(alg.structure_constant(0, 1, 2), a);
        prop_assert_eq!(alg.structure_constant(0, 2, 3), b);
        prop_assert_eq!(alg.structure_constant(1, 2, 3), c);
        prop_assert_eq!(alg.structure_constant(1, 0, 2), -a);
    }
}
