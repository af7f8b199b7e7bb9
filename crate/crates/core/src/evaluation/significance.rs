//! Paired sign-flip permutation tests on per-query metric values.
//!
//! The statistic is the mean difference `mean(a − b)`. Under the null each
//! difference is equally likely to carry either sign.

use rand::RngCore;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed;

/// Samples drawn from one derived seed; fixing the block size keeps the
/// result independent of the number of worker threads.
const BLOCK: u64 = 4096;

/// Largest `n` accepted by [`exact_permutation_test`].
pub const EXACT_MAX_PAIRS: usize = 24;

fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::DegenerateInput("no paired values"));
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            if d.is_finite() {
                Ok(d)
            } else {
                Err(Error::NonFinite(d))
            }
        })
        .collect()
}

/// `|s| ≥ |observed|` up to accumulated rounding, so that exact ties under
/// a different summation order still count.
struct Extremeness {
    threshold: f64,
}

impl Extremeness {
    fn new(diffs: &[f64]) -> Self {
        let observed: f64 = diffs.iter().sum::<f64>().abs();
        let scale: f64 = diffs.iter().map(|d| d.abs()).sum();
        Extremeness {
            threshold: observed - 1e-12 * scale,
        }
    }

    fn at_least(&self, s: f64) -> bool {
        s.abs() >= self.threshold
    }
}

/// Monte Carlo two-sided p-value `(1 + hits) / (samples + 1)`.
pub fn mc_permutation_test(a: &[f64], b: &[f64], samples: u64, rng_seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidConfig("samples must be >= 1".into()));
    }
    let diffs = differences(a, b)?;
    let extreme = Extremeness::new(&diffs);
    let blocks = samples.div_ceil(BLOCK);
    let hits: u64 = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut rng = seed::rng(seed::derive_indexed(rng_seed, "permutation", blk));
            let n = BLOCK.min(samples - blk * BLOCK);
            let mut hits = 0u64;
            for _ in 0..n {
                let mut s = 0.0;
                for chunk in diffs.chunks(64) {
                    let bits = rng.next_u64();
                    for (i, d) in chunk.iter().enumerate() {
                        if bits >> i & 1 == 1 {
                            s -= d;
                        } else {
                            s += d;
                        }
                    }
                }
                hits += extreme.at_least(s) as u64;
            }
            hits
        })
        .sum();
    Ok((1 + hits) as f64 / (samples + 1) as f64)
}

/// Exact two-sided p-value over all `2ⁿ` sign assignments.
pub fn exact_permutation_test(a: &[f64], b: &[f64]) -> Result<f64> {
    let diffs = differences(a, b)?;
    if diffs.len() > EXACT_MAX_PAIRS {
        return Err(Error::InvalidConfig(format!(
            "exact enumeration supports at most {EXACT_MAX_PAIRS} pairs, got {}",
            diffs.len()
        )));
    }
    let extreme = Extremeness::new(&diffs);
    let total = 1u64 << diffs.len();
    let hits: u64 = (0..total)
        .into_par_iter()
        .filter(|&mask| {
            let s: f64 = diffs
                .iter()
                .enumerate()
                .map(|(i, d)| if mask >> i & 1 == 1 { -d } else { *d })
                .sum();
            extreme.at_least(s)
        })
        .count() as u64;
    Ok(hits as f64 / total as f64)
}
