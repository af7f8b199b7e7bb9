//! Brute-force reference implementations of the ranking metrics, the
//! Spearman correlation and the exact permutation test.

#![allow(dead_code)]

use clicklabel::evaluation::{RankedItem, RankedQuery};

pub fn query(items: &[(f64, f64)]) -> RankedQuery {
    RankedQuery {
        query: "q".into(),
        items: items
            .iter()
            .enumerate()
            .map(|(i, &(gold, score))| RankedItem {
                url: format!("u{i:02}"),
                gold,
                score,
            })
            .collect(),
    }
}

/// Ranking by repeated selection of the best remaining item.
pub fn brute_order(rq: &RankedQuery) -> Vec<&RankedItem> {
    let mut left: Vec<&RankedItem> = rq.items.iter().collect();
    let mut order = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            let (a, b) = (left[i], left[best]);
            if a.score > b.score || (a.score == b.score && a.url < b.url) {
                best = i;
            }
        }
        order.push(left.remove(best));
    }
    order
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

pub fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains.take(10).enumerate().map(|(i, g)| g / (i as f64 + 2.0).log2()).sum()
}

/// NDCG@10 with the ideal ordering found by trying every permutation.
pub fn brute_ndcg(rq: &RankedQuery) -> f64 {
    let gain = |i: &RankedItem| if i.gold > 0.5 { 1.0 } else { 0.0 };
    let ideal = permutations(rq.items.len())
        .iter()
        .map(|p| dcg(p.iter().map(|&i| gain(&rq.items[i]))))
        .fold(0.0, f64::max);
    if ideal == 0.0 {
        return 0.0;
    }
    dcg(brute_order(rq).into_iter().map(gain)) / ideal
}

pub fn brute_precision(rq: &RankedQuery) -> f64 {
    brute_order(rq).iter().take(10).filter(|i| i.gold > 0.5).count() as f64 / 10.0
}

/// Pearson on mid-ranks, ranks counted pairwise.
pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    let ranks = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                1.0 + less + (equal - 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn brute_exact_p(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed: f64 = d.iter().sum::<f64>().abs();
    let n = d.len();
    let mut hits = 0;
    for mask in 0u32..(1 << n) {
        let s: f64 = (0..n).map(|i| if mask >> i & 1 == 1 { -d[i] } else { d[i] }).sum();
        if s.abs() >= observed {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}
