//! Query eligibility, per-query request bounds and result-list truncation.

use std::collections::{BinaryHeap, HashMap, HashSet};

use crate::dataset::Request;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct CurationPolicy {
    /// Minimum query length in characters, spaces included.
    pub min_query_chars: usize,
    /// Accept only queries made of Unicode letters and spaces.
    pub alpha_only: bool,
    pub min_unique_requests: usize,
    pub max_unique_requests: usize,
    /// Every request keeps at least the positions `0..=truncate_floor_rank`.
    pub truncate_floor_rank: u32,
    pub rng_seed: u64,
}

impl Default for CurationPolicy {
    fn default() -> Self {
        CurationPolicy {
            min_query_chars: 10,
            alpha_only: true,
            min_unique_requests: 5,
            max_unique_requests: 15,
            truncate_floor_rank: 4,
            rng_seed: 0,
        }
    }
}

impl CurationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.min_query_chars < 1 {
            return Err(Error::InvalidConfig("min_query_chars must be at least 1".into()));
        }
        if self.min_unique_requests == 0 || self.min_unique_requests > self.max_unique_requests {
            return Err(Error::InvalidConfig(format!(
                "need 0 < min_unique_requests ({}) <= max_unique_requests ({})",
                self.min_unique_requests, self.max_unique_requests
            )));
        }
        Ok(())
    }
}

/// Pluggable query filter, e.g. language or intent classification.
pub type QueryPredicate<'a> = &'a (dyn Fn(&str) -> bool + Sync);

pub fn query_eligible(query: &str, policy: &CurationPolicy, extra: Option<QueryPredicate>) -> bool {
    if query.chars().count() < policy.min_query_chars {
        return false;
    }
    if policy.alpha_only && !query.chars().all(|c| c == ' ' || c.is_alphabetic()) {
        return false;
    }
    extra.is_none_or(|p| p(query))
}

/// Keeps impressions up to the last clicked rank or the floor rank,
/// whichever is greater. Unranked impressions are always kept.
pub fn truncate_request(mut request: Request, policy: &CurationPolicy) -> Result<Request> {
    let mut last_clicked: Option<u32> = None;
    for r in request.impressions.iter().filter(|r| r.clicks > 0) {
        match r.rank {
            Some(rank) => last_clicked = last_clicked.max(Some(rank)),
            None => {
                return Err(Error::NoRankOnClicked {
                    request_id: request.request_id,
                })
            }
        }
    }
    let cutoff = last_clicked.map_or(policy.truncate_floor_rank, |r| r.max(policy.truncate_floor_rank));
    request
        .impressions
        .retain(|r| r.rank.is_none_or(|rank| rank <= cutoff));
    Ok(request)
}

/// Two-pass enforcement of the per-query request bounds.
///
/// The first pass [`observe`](FrequencyFilter::observe)s every request; the
/// second asks [`admits`](FrequencyFilter::admits) for each. For queries above
/// the cap, the kept requests are those with the smallest keys
/// `hash(seed, query, request_id)`, i.e. a bottom-k sample. The sample is
/// uniform and does not depend on input order.
#[derive(Debug, Default)]
pub struct FrequencyFilter {
    min: usize,
    max: usize,
    seed: u64,
    queries: HashMap<String, QuerySample>,
}

#[derive(Debug, Default)]
struct QuerySample {
    count: usize,
    // max-heap of the smallest keys seen so far
    smallest: BinaryHeap<(u64, String)>,
}

impl FrequencyFilter {
    pub fn new(policy: &CurationPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(FrequencyFilter {
            min: policy.min_unique_requests,
            max: policy.max_unique_requests,
            seed: policy.rng_seed,
            queries: HashMap::new(),
        })
    }

    fn key(&self, query: &str, request_id: &str) -> u64 {
        let q = seed::derive_keyed(self.seed, "curation.sample", query.as_bytes());
        seed::mix64(q ^ seed::fnv1a(request_id.as_bytes()))
    }

    pub fn observe(&mut self, request: &Request) {
        let key = self.key(&request.query, &request.request_id);
        let max = self.max;
        let sample = self.queries.entry(request.query.clone()).or_default();
        sample.count += 1;
        if sample.smallest.len() < max {
            sample.smallest.push((key, request.request_id.clone()));
        } else if let Some(top) = sample.smallest.peek() {
            if (key, request.request_id.as_str()) < (top.0, top.1.as_str()) {
                sample.smallest.pop();
                sample.smallest.push((key, request.request_id.clone()));
            }
        }
    }

    /// Freezes the observations into the admitted request set.
    pub fn finish(self) -> AdmittedRequests {
        let mut all: HashSet<String> = HashSet::new();
        let mut sampled: HashMap<String, HashSet<String>> = HashMap::new();
        for (query, sample) in self.queries {
            if sample.count < self.min {
                continue;
            }
            if sample.count <= self.max {
                all.insert(query);
            } else {
                sampled.insert(query, sample.smallest.into_iter().map(|(_, id)| id).collect());
            }
        }
        AdmittedRequests { all, sampled }
    }
}

#[derive(Debug)]
pub struct AdmittedRequests {
    all: HashSet<String>,
    sampled: HashMap<String, HashSet<String>>,
}

impl AdmittedRequests {
    pub fn admits(&self, request: &Request) -> bool {
        self.all.contains(&request.query)
            || self
                .sampled
                .get(&request.query)
                .is_some_and(|ids| ids.contains(&request.request_id))
    }

    pub fn query_count(&self) -> usize {
        self.all.len() + self.sampled.len()
    }
}

/// In-memory form of the two-pass filter; keeps the input order of the
/// surviving requests.
pub fn enforce_frequency_bounds<I>(requests: I, policy: &CurationPolicy) -> Result<Vec<Request>>
where
    I: IntoIterator<Item = Request>,
{
    let requests: Vec<Request> = requests.into_iter().collect();
    let mut filter = FrequencyFilter::new(policy)?;
    requests.iter().for_each(|r| filter.observe(r));
    let admitted = filter.finish();
    Ok(requests.into_iter().filter(|r| admitted.admits(r)).collect())
}

/// Eligibility, truncation and frequency bounds, in that order.
pub fn curate<I>(requests: I, policy: &CurationPolicy, extra: Option<QueryPredicate>) -> Result<Vec<Request>>
where
    I: IntoIterator<Item = Request>,
{
    let kept = requests
        .into_iter()
        .filter(|r| query_eligible(&r.query, policy, extra))
        .map(|r| truncate_request(r, policy))
        .collect::<Result<Vec<_>>>()?;
    enforce_frequency_bounds(kept, policy)
}
