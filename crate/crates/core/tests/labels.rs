mod support {
    pub mod oracle;
}

use clicklabel::aggregation::AggregatedPair;
use clicklabel::labeling::{
    label, label_pairs, loss_weight, mean_known_dwell, DwellMissing, LabelConfig, LabelFormula, WeightMode,
};
use proptest::prelude::*;
use support::oracle;

const FORMULAS: [LabelFormula; 4] = [
    LabelFormula::Clicks,
    LabelFormula::Dwell,
    LabelFormula::Rank,
    LabelFormula::ClickDwellRank,
];

fn configs(pairs: &[AggregatedPair]) -> Vec<LabelConfig> {
    let mut mean = LabelConfig {
        dwell_missing: DwellMissing::Mean,
        weight_mode: WeightMode::Views,
        ..LabelConfig::default()
    };
    mean.resolve_mean(pairs);
    vec![
        LabelConfig::default(),
        LabelConfig {
            alpha: 0.5,
            beta: 2.0,
            scale: 0.1,
            rank_c: 7.5,
            dwell_missing: DwellMissing::Zero,
            weight_mode: WeightMode::Clicks,
            ..LabelConfig::default()
        },
        mean,
    ]
}

#[test]
fn labels_match_high_precision_oracle() {
    let pairs: Vec<AggregatedPair> = (0..10_000).map(oracle::fuzz_pair).collect();
    let mut worst = 0.0f64;
    for cfg in configs(&pairs) {
        for p in &pairs {
            for f in FORMULAS {
                let got = label(p, f, &cfg).unwrap();
                let want = oracle::label(p, f, &cfg);
                let err = oracle::rel_err(got, want);
                assert!(err <= 1e-12, "{f} on {p:?}: got {got}, want {want}");
                worst = worst.max(err);
            }
            let err = oracle::rel_err(loss_weight(p, &cfg), oracle::loss_weight(p, &cfg));
            assert!(err <= 1e-12, "weight on {p:?}");
        }
    }
    assert!(worst < 1e-13, "worst relative error {worst}");
}

#[test]
fn fuzzed_pairs_reach_both_clip_bounds() {
    // Saturation at mass e^10 rather than the default e^20.
    let cfg = LabelConfig {
        scale: 0.1,
        ..LabelConfig::default()
    };
    let pairs: Vec<AggregatedPair> = (0..10_000).map(oracle::fuzz_pair).collect();
    for f in [LabelFormula::Clicks, LabelFormula::ClickDwellRank] {
        let labels: Vec<f64> = pairs.iter().map(|p| label(p, f, &cfg).unwrap()).collect();
        assert!(labels.iter().any(|&l| l == 1.0), "{f} never saturates");
        assert!(labels.iter().any(|&l| l > 0.0 && l < 0.5), "{f} never small");
    }
}

#[test]
fn mean_policy_needs_resolution() {
    let p = AggregatedPair {
        views: 3,
        ..AggregatedPair::default()
    };
    let cfg = LabelConfig {
        dwell_missing: DwellMissing::Mean,
        ..LabelConfig::default()
    };
    assert!(label(&p, LabelFormula::Dwell, &cfg).is_err());
    assert_eq!(mean_known_dwell([&p]), None);
}

fn arb_pair() -> impl Strategy<Value = AggregatedPair> {
    (1u64..100_000, 0u64..10_000, 0u64..10_000, 0u64..1_000_000, 0u64..2_000_000).prop_map(
        |(views, nonlast, last, dwell, rank_sum)| AggregatedPair {
            query: "q".into(),
            url: "u".into(),
            views,
            clicks_total: nonlast + last,
            nonlast_clicks: nonlast,
            last_clicks: last,
            dwell_total: dwell,
            dwell_known: u64::from(dwell > 0),
            rank_sum,
            rank_known: views,
            ..AggregatedPair::default()
        },
    )
}

proptest! {
    #[test]
    fn labels_stay_in_unit_interval(p in arb_pair()) {
        let cfg = LabelConfig::default();
        for f in FORMULAS {
            let l = label(&p, f, &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&l));
        }
    }

    #[test]
    fn more_clicks_never_lower_click_labels(p in arb_pair(), extra in 1u64..1000) {
        let cfg = LabelConfig::default();
        let mut q = p.clone();
        q.nonlast_clicks += extra;
        q.clicks_total += extra;
        for f in [LabelFormula::Clicks, LabelFormula::ClickDwellRank] {
            prop_assert!(label(&q, f, &cfg).unwrap() >= label(&p, f, &cfg).unwrap());
        }
    }

    #[test]
    fn batch_labeling_matches_single(pairs in prop::collection::vec(arb_pair(), 0..40)) {
        let cfg = LabelConfig::default();
        let rows = label_pairs(&pairs, LabelFormula::ClickDwellRank, &cfg).unwrap();
        prop_assert_eq!(rows.len(), pairs.len());
        for (row, p) in rows.iter().zip(&pairs) {
            prop_assert_eq!(row.label, label(p, LabelFormula::ClickDwellRank, &cfg).unwrap());
            prop_assert_eq!(row.weight, 1.0);
        }
    }
}
