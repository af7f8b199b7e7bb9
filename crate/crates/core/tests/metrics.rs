mod support {
    pub mod brute;
}

use clicklabel::evaluation::{exact_permutation_test, mc_permutation_test, ndcg_at_10, precision_at_10, spearman};
use proptest::prelude::*;
use support::brute::*;

fn arb_items(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    // Coarse grids make gold ties and score ties common.
    prop::collection::vec(((0u8..5).prop_map(|g| g as f64 / 4.0), (-3i8..4).prop_map(f64::from)), 1..=max)
}

#[test]
fn worked_example() {
    let rq = query(&[(1.0, 0.9), (0.0, 0.8), (1.0, 0.7)]);
    let expected = (1.0 + 0.5) / (1.0 + 1.0 / 3f64.log2());
    assert!((ndcg_at_10(&rq) - expected).abs() < 1e-15);
    assert_eq!(precision_at_10(&rq), 0.2);
}

#[test]
fn no_relevant_items_score_zero() {
    let rq = query(&[(0.5, 1.0), (0.0, 2.0)]);
    assert_eq!(ndcg_at_10(&rq), 0.0);
    assert_eq!(precision_at_10(&rq), 0.0);
}

proptest! {
    #[test]
    fn ndcg_matches_brute_force(items in arb_items(6)) {
        let rq = query(&items);
        prop_assert!((ndcg_at_10(&rq) - brute_ndcg(&rq)).abs() < 1e-12);
    }

    #[test]
    fn precision_matches_brute_force(items in arb_items(14)) {
        let rq = query(&items);
        prop_assert_eq!(precision_at_10(&rq), brute_precision(&rq));
    }

    #[test]
    fn metrics_ignore_monotone_score_transforms(items in arb_items(14)) {
        let rq = query(&items);
        for f in [|s: f64| 2.0 * s + 5.0, |s: f64| s * s * s, |s: f64| (s / 3.0).exp()] {
            let moved = query(&items.iter().map(|&(g, s)| (g, f(s))).collect::<Vec<_>>());
            prop_assert_eq!(ndcg_at_10(&moved), ndcg_at_10(&rq));
            prop_assert_eq!(precision_at_10(&moved), precision_at_10(&rq));
        }
    }

    #[test]
    fn spearman_matches_brute_force(xy in prop::collection::vec((-4i8..5, -4i8..5), 3..30)) {
        let x: Vec<f64> = xy.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = xy.iter().map(|p| p.1 as f64).collect();
        match spearman(&x, &y) {
            Ok(r) => prop_assert!((r - brute_spearman(&x, &y)).abs() < 1e-12),
            // Constant input has no defined correlation.
            Err(_) => prop_assert!(brute_spearman(&x, &y).is_nan()),
        }
    }

    #[test]
    fn spearman_is_rank_based(x in prop::collection::vec(-1000i32..1000, 3..40), seed in any::<u64>()) {
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + ((seed >> (i % 64)) & 7) as f64 * 100.0).collect();
        let Ok(r) = spearman(&x, &y) else { return Ok(()) };
        let x3: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        let ey: Vec<f64> = y.iter().map(|v| (v / 500.0).exp()).collect();
        prop_assert!((spearman(&x3, &ey).unwrap() - r).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert!((spearman(&neg, &y).unwrap() + r).abs() < 1e-12);
        prop_assert!((spearman(&x, &x3).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_test_matches_enumeration(ab in prop::collection::vec((0u8..9, 0u8..9), 1..12)) {
        // Quarter steps keep every partial sum exact.
        let a: Vec<f64> = ab.iter().map(|p| p.0 as f64 / 4.0).collect();
        let b: Vec<f64> = ab.iter().map(|p| p.1 as f64 / 4.0).collect();
        prop_assert_eq!(exact_permutation_test(&a, &b).unwrap(), brute_exact_p(&a, &b));
    }
}

#[test]
fn monte_carlo_tracks_exact() {
    let a = [0.9, 0.8, 0.75, 0.6, 0.55, 0.7, 0.65, 0.5];
    let b = [0.7, 0.85, 0.6, 0.5, 0.6, 0.55, 0.6, 0.45];
    let exact = exact_permutation_test(&a, &b).unwrap();
    let mc = mc_permutation_test(&a, &b, 100_000, 3).unwrap();
    assert!((mc - exact).abs() < 0.01, "mc {mc} exact {exact}");
}
