//! Soft negatives and contrastive training batches.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;

use crate::dataset::{Document, LabeledRow};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, Default)]
pub struct NegativePolicy {
    /// Number of negatives per query.
    pub negatives_per_query: usize,
    pub rng_seed: u64,
    /// Observed (query, url) pairs that must never be sampled.
    pub exclusion: HashSet<(String, String)>,
}

impl NegativePolicy {
    pub fn new(negatives_per_query: usize, rng_seed: u64) -> Self {
        NegativePolicy {
            negatives_per_query,
            rng_seed,
            exclusion: HashSet::new(),
        }
    }

    pub fn exclude_observed<'a, I>(&mut self, rows: I)
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        self.exclusion
            .extend(rows.into_iter().map(|(q, u)| (q.to_owned(), u.to_owned())));
    }
}

fn negatives_for(query: &str, pool: &[Document], excluded: &HashSet<usize>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let eligible = pool.len() - excluded.len();
    if eligible < k {
        return Err(Error::PoolExhausted {
            query: query.to_owned(),
            eligible,
            requested: k,
        });
    }
    let mut rng = seed::rng(seed::derive_keyed(seed, "negatives", query.as_bytes()));
    if 2 * k >= eligible {
        let candidates: Vec<usize> = (0..pool.len()).filter(|i| !excluded.contains(i)).collect();
        return Ok(index::sample(&mut rng, candidates.len(), k)
            .into_iter()
            .map(|i| candidates[i])
            .collect());
    }
    // Rejection sampling; at least half of the pool is eligible here.
    let mut chosen = Vec::with_capacity(k);
    let mut taken = HashSet::with_capacity(k);
    while chosen.len() < k {
        let i = rng.random_range(0..pool.len());
        if !excluded.contains(&i) && taken.insert(i) {
            chosen.push(i);
        }
    }
    Ok(chosen)
}

/// For every query, samples `k` documents uniformly without replacement
/// from the pool minus the documents observed with that query. Output rows
/// carry label 0 and weight 1, grouped by query in input order.
pub fn sample_soft_negatives(queries: &[String], pool: &[Document], policy: &NegativePolicy) -> Result<Vec<LabeledRow>> {
    let k = policy.negatives_per_query;
    if k == 0 {
        return Ok(Vec::new());
    }
    let by_url: HashMap<&str, usize> = pool.iter().enumerate().map(|(i, d)| (d.url.as_str(), i)).collect();
    let mut excluded: HashMap<&str, HashSet<usize>> = HashMap::new();
    for (q, u) in &policy.exclusion {
        if let Some(&i) = by_url.get(u.as_str()) {
            excluded.entry(q.as_str()).or_default().insert(i);
        }
    }
    let empty = HashSet::new();
    let per_query: Vec<Vec<usize>> = queries
        .par_iter()
        .map(|q| negatives_for(q, pool, excluded.get(q.as_str()).unwrap_or(&empty), k, policy.rng_seed))
        .collect::<Result<_>>()?;
    Ok(queries
        .iter()
        .zip(per_query)
        .flat_map(|(q, docs)| {
            docs.into_iter().map(move |i| LabeledRow {
                query: q.clone(),
                url: pool[i].url.clone(),
                title: pool[i].title.clone(),
                bte: pool[i].bte.clone(),
                label: 0.0,
                weight: 1.0,
            })
        })
        .collect())
}

/// Shuffles `items` and packs them into batches of `batch_size` in which no
/// query occurs twice. An item whose query is already in the open batch is
/// deferred to a later batch. Trailing batches may be short.
pub fn build_batches<T, F>(mut items: Vec<T>, batch_size: usize, rng_seed: u64, query_of: F) -> Result<Vec<Vec<T>>>
where
    F: Fn(&T) -> &str,
{
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    items.shuffle(&mut seed::rng(seed::derive(rng_seed, "batches")));
    let mut fresh: VecDeque<T> = items.into();
    let mut deferred: VecDeque<T> = VecDeque::new();
    let mut batches = Vec::new();
    while !fresh.is_empty() || !deferred.is_empty() {
        let mut batch: Vec<T> = Vec::with_capacity(batch_size);
        let mut queries: HashSet<String> = HashSet::new();
        let mut still_deferred = VecDeque::new();
        while let Some(item) = deferred.pop_front() {
            if batch.len() < batch_size && !queries.contains(query_of(&item)) {
                queries.insert(query_of(&item).to_owned());
                batch.push(item);
            } else {
                still_deferred.push_back(item);
            }
        }
        while batch.len() < batch_size {
            let Some(item) = fresh.pop_front() else { break };
            if queries.contains(query_of(&item)) {
                still_deferred.push_back(item);
            } else {
                queries.insert(query_of(&item).to_owned());
                batch.push(item);
            }
        }
        deferred = still_deferred;
        batches.push(batch);
    }
    Ok(batches)
}
