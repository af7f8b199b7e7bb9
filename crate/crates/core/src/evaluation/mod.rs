//! Ranking metrics, rank correlation, baselines and significance testing.

pub mod correlation;
pub mod significance;

pub use correlation::{correlation_report, join_gold, spearman, CorrelationRow, LabelScheme};
pub use significance::{exact_permutation_test, mc_permutation_test};

use std::cmp::Ordering;

use rand::Rng as _;
use rayon::prelude::*;

use crate::dataset::TestQuery;
use crate::seed;

/// Gold labels strictly above this value count as relevant.
pub const RELEVANCE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct RankedItem {
    pub url: String,
    pub gold: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedQuery {
    pub query: String,
    pub items: Vec<RankedItem>,
}

impl RankedQuery {
    /// Binary gains in ranked order: score descending, ties by url ascending.
    pub fn ranked_gains(&self) -> Vec<f64> {
        let mut order: Vec<&RankedItem> = self.items.iter().collect();
        order.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.url.cmp(&b.url)));
        order.iter().map(|i| gain(i.gold)).collect()
    }
}

fn gain(gold: f64) -> f64 {
    if gold > RELEVANCE_THRESHOLD {
        1.0
    } else {
        0.0
    }
}

fn dcg(gains: &[f64], k: usize) -> f64 {
    gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k with binary gains; 0 when the query has no relevant item.
pub fn ndcg_at_k(rq: &RankedQuery, k: usize) -> f64 {
    let gains = rq.ranked_gains();
    let mut ideal = gains.clone();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let idcg = dcg(&ideal, k);
    if idcg == 0.0 {
        0.0
    } else {
        dcg(&gains, k) / idcg
    }
}

pub fn ndcg_at_10(rq: &RankedQuery) -> f64 {
    ndcg_at_k(rq, 10)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PrecisionDenominator {
    /// Always divide by k.
    #[default]
    Fixed,
    /// Divide by min(k, list length).
    Available,
}

pub fn precision_at_k(rq: &RankedQuery, k: usize, denominator: PrecisionDenominator) -> f64 {
    let gains = rq.ranked_gains();
    let hits: f64 = gains.iter().take(k).sum();
    let denom = match denominator {
        PrecisionDenominator::Fixed => k,
        PrecisionDenominator::Available => k.min(gains.len()),
    };
    if denom == 0 {
        0.0
    } else {
        hits / denom as f64
    }
}

pub fn precision_at_10(rq: &RankedQuery) -> f64 {
    precision_at_k(rq, 10, PrecisionDenominator::Fixed)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Builds ranked queries from a test set with scores from `score`.
pub fn rank_test_set<F>(test: &[TestQuery], mut score: F) -> Vec<RankedQuery>
where
    F: FnMut(&str, &str) -> f64,
{
    test.iter()
        .map(|q| RankedQuery {
            query: q.query.clone(),
            items: q
                .pairs
                .iter()
                .map(|p| RankedItem {
                    url: p.url.clone(),
                    gold: p.label,
                    score: score(&p.query, &p.url),
                })
                .collect(),
        })
        .collect()
}

/// Mean NDCG@10 over `trials` independent uniformly random scorings.
pub fn random_baseline(test: &[TestQuery], trials: usize, rng_seed: u64) -> f64 {
    random_baseline_with(test, trials, rng_seed, ndcg_at_10)
}

/// [`random_baseline`] under any per-query metric.
pub fn random_baseline_with<M>(test: &[TestQuery], trials: usize, rng_seed: u64, metric: M) -> f64
where
    M: Fn(&RankedQuery) -> f64 + Sync,
{
    let per_trial: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive_indexed(rng_seed, "random_baseline", t as u64));
            let ranked = rank_test_set(test, |_, _| rng.random::<f64>());
            mean(&ranked.iter().map(&metric).collect::<Vec<_>>())
        })
        .collect();
    mean(&per_trial)
}

/// Mean NDCG@10 when the gold label itself is the score.
pub fn oracle_baseline(test: &[TestQuery]) -> f64 {
    let gold: std::collections::HashMap<(&str, &str), f64> = test
        .iter()
        .flat_map(|q| q.pairs.iter().map(|p| ((p.query.as_str(), p.url.as_str()), p.label)))
        .collect();
    let ranked = rank_test_set(test, |q, u| gold[&(q, u)]);
    mean(&ranked.iter().map(ndcg_at_10).collect::<Vec<_>>())
}
