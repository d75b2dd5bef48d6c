use mallows::measures::{
    blocking_prob, cdf_product, pmf_neighbors, pmf_single, second_class_position_pmf, second_class_rate, Convention,
    MallowsParams,
};
use mallows::qseries::{verify_identity, IdentityInput, TruncationPolicy};
use mallows::sampler::{sample_window, seeded_rng};
use mallows::stats::{tv_distance, Pmf};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = MallowsParams> {
    (0.05f64..0.95, -2.0f64..2.0).prop_map(|(q, la)| MallowsParams::new(q, la.exp()).unwrap())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

fn law() -> impl Strategy<Value = Pmf<i64>> {
    prop::collection::vec(0.0f64..1.0, 1..8).prop_map(|w| {
        let s: f64 = w.iter().sum::<f64>().max(1e-12);
        let mut p = Pmf::new();
        for (k, x) in w.iter().enumerate() {
            p.insert(k as i64, x / s);
        }
        p
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tv_is_a_metric(a in law(), b in law(), c in law()) {
        let (ab, ba, ac, bc) = (tv_distance(&a, &b), tv_distance(&b, &a), tv_distance(&a, &c), tv_distance(&b, &c));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-15);
        prop_assert!(tv_distance(&a, &a) < 1e-15);
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn single_point_law_is_translation_invariant(p in params(), i in -50i64..50, x in -50i64..50, s in -30i64..30) {
        prop_assert!(close(pmf_single(&p, i, x).ln(), pmf_single(&p, i + s, x + s).ln(), 1e-12));
    }

    #[test]
    fn inversion_swaps_position_and_value_and_inverts_alpha(p in params(), i in -20i64..20, x in -20i64..20) {
        let a = pmf_single(&p, i, x).prob();
        let b = pmf_single(&p.inverse(), x, i).prob();
        prop_assert!(close(a, b, 1e-12), "{} vs {}", a, b);
    }

    #[test]
    fn adjacent_transposition_costs_one_power_of_q(
        p in params(),
        i in -5i64..5,
        base in prop::collection::btree_set(-8i64..8, 2..5),
        j in 0usize..4,
    ) {
        let mut v: Vec<i64> = base.into_iter().collect();
        let j = j % (v.len() - 1);
        let sorted = pmf_neighbors(&p, i, &v).unwrap().ln();
        v.swap(j, j + 1);
        let swapped = pmf_neighbors(&p, i, &v).unwrap().ln();
        prop_assert!((swapped - sorted - p.q().ln()).abs() < 1e-10);
    }

    #[test]
    fn cdf_of_one_point_is_a_partial_sum(p in params(), i in -5i64..5, x in -5i64..5) {
        let direct = cdf_product(&p, &[(i, x)]).unwrap().prob();
        let center = i + p.center();
        let summed: f64 = (center - 2000..=x).map(|y| pmf_single(&p, i, y).prob()).sum();
        prop_assert!((direct - summed).abs() < 1e-12);
    }

    #[test]
    fn blocking_probabilities_sum_to_one(p in params(), i in -30i64..30) {
        let b = blocking_prob(&p, i);
        prop_assert!((b.particle.prob() + b.hole.prob() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn second_class_rates_are_reversible(p in params(), x in -10i64..10, literal in any::<bool>()) {
        let conv = if literal { Convention::Literal } else { Convention::Oracle };
        let up = second_class_position_pmf(&p, x, conv).ln() + second_class_rate(&p, x, 1, conv).unwrap().ln();
        let down = second_class_position_pmf(&p, x + 1, conv).ln() + second_class_rate(&p, x + 1, -1, conv).unwrap().ln();
        prop_assert!((up - down).abs() < 1e-12);
    }

    #[test]
    fn identities_hold_on_random_inputs(
        q in 0.1f64..0.9,
        la in -1.4f64..1.4,
        x in -5i64..5,
        xs in prop::collection::vec(-5i64..5, 1..4),
    ) {
        let pol = TruncationPolicy::default();
        let alpha = la.exp();
        let mut xs = xs;
        xs.sort_unstable();
        for input in [
            IdentityInput::Euler { q, z: x as f64 / 3.0 },
            IdentityInput::Jacobi { q, alpha },
            IdentityInput::LemmaA1 { q, alpha, x },
            IdentityInput::LemmaA2 { q, alpha, xs: xs.clone() },
        ] {
            let e = verify_identity(&input, &pol).unwrap();
            prop_assert!(e < 1e-10, "{:?}: {}", input, e);
        }
    }

    #[test]
    fn sampled_windows_are_injective_and_reproducible(p in params(), i0 in -5i64..5, k in 1usize..12, seed in any::<u64>()) {
        let pol = TruncationPolicy::default();
        let a = sample_window(&p, i0, k, &mut seeded_rng(seed, 0), &pol).unwrap();
        let b = sample_window(&p, i0, k, &mut seeded_rng(seed, 0), &pol).unwrap();
        prop_assert_eq!(&a, &b);
        let mut v = a.window.values.clone();
        v.sort_unstable();
        v.dedup();
        prop_assert_eq!(v.len(), k);
        prop_assert!(a.tv_bound < 1e-10);
    }
}
