//! Summary statistics of a click log.

use std::collections::{BTreeMap, HashMap};

use crate::dataset::Request;

#[derive(Clone, Debug, Default)]
pub struct StatsCollector {
    requests: u64,
    impressions: u64,
    clicks: u64,
    unranked_clicks: u64,
    clicks_by_rank: Vec<u64>,
    impressions_by_rank: Vec<u64>,
    dwell: BTreeMap<u32, u64>,
    /// query → url → clicks
    pairs: HashMap<String, HashMap<String, u64>>,
}

impl StatsCollector {
    pub fn add(&mut self, request: &Request) {
        self.requests += 1;
        let urls = self.pairs.entry(request.query.clone()).or_default();
        for imp in &request.impressions {
            self.impressions += 1;
            self.clicks += imp.clicks as u64;
            *urls.entry(imp.url.clone()).or_default() += imp.clicks as u64;
            match imp.rank {
                Some(r) => {
                    let r = r as usize;
                    if self.clicks_by_rank.len() <= r {
                        self.clicks_by_rank.resize(r + 1, 0);
                        self.impressions_by_rank.resize(r + 1, 0);
                    }
                    self.clicks_by_rank[r] += imp.clicks as u64;
                    self.impressions_by_rank[r] += 1;
                }
                None => self.unranked_clicks += imp.clicks as u64,
            }
            if let Some(d) = imp.dwell_time {
                *self.dwell.entry(d).or_default() += 1;
            }
        }
    }

    pub fn finish(self) -> LogStats {
        let mut docs_per_query = BTreeMap::new();
        let (mut pairs, mut clicked_pairs) = (0, 0);
        for urls in self.pairs.values() {
            *docs_per_query.entry(urls.len()).or_default() += 1;
            pairs += urls.len() as u64;
            clicked_pairs += urls.values().filter(|&&c| c > 0).count() as u64;
        }
        LogStats {
            requests: self.requests,
            impressions: self.impressions,
            queries: self.pairs.len() as u64,
            pairs,
            clicked_pairs,
            clicks: self.clicks,
            unranked_clicks: self.unranked_clicks,
            clicks_by_rank: self.clicks_by_rank,
            impressions_by_rank: self.impressions_by_rank,
            dwell: self.dwell,
            docs_per_query,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogStats {
    pub requests: u64,
    pub impressions: u64,
    pub queries: u64,
    /// Distinct (query, url) pairs.
    pub pairs: u64,
    pub clicked_pairs: u64,
    pub clicks: u64,
    pub unranked_clicks: u64,
    pub clicks_by_rank: Vec<u64>,
    pub impressions_by_rank: Vec<u64>,
    /// Dwell time → number of impressions with it.
    pub dwell: BTreeMap<u32, u64>,
    /// Distinct urls per query → number of queries.
    pub docs_per_query: BTreeMap<usize, u64>,
}

impl LogStats {
    pub fn from_requests<'a, I>(requests: I) -> LogStats
    where
        I: IntoIterator<Item = &'a Request>,
    {
        let mut c = StatsCollector::default();
        requests.into_iter().for_each(|r| c.add(r));
        c.finish()
    }

    fn ratio(num: u64, den: u64) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn clicked_pair_fraction(&self) -> f64 {
        Self::ratio(self.clicked_pairs, self.pairs)
    }

    pub fn unclicked_pair_fraction(&self) -> f64 {
        Self::ratio(self.pairs - self.clicked_pairs, self.pairs)
    }

    /// Share of all clicks on ranks `0..k`.
    pub fn top_click_share(&self, k: usize) -> f64 {
        Self::ratio(self.clicks_by_rank.iter().take(k).sum(), self.clicks)
    }

    /// Clicks per impression at each rank.
    pub fn click_rate_by_rank(&self) -> Vec<f64> {
        self.clicks_by_rank
            .iter()
            .zip(&self.impressions_by_rank)
            .map(|(&c, &n)| Self::ratio(c, n))
            .collect()
    }

    pub fn dwell_count(&self) -> u64 {
        self.dwell.values().sum()
    }

    pub fn dwell_mean(&self) -> Option<f64> {
        let n = self.dwell_count();
        (n > 0).then(|| {
            let total: u128 = self.dwell.iter().map(|(&d, &c)| d as u128 * c as u128).sum();
            total as f64 / n as f64
        })
    }

    /// Median dwell; the mean of the two middle values for an even count.
    pub fn dwell_median(&self) -> Option<f64> {
        let n = self.dwell_count();
        if n == 0 {
            return None;
        }
        let nth = |k: u64| {
            let mut seen = 0;
            for (&d, &c) in &self.dwell {
                seen += c;
                if seen > k {
                    return d as f64;
                }
            }
            unreachable!("k < total count")
        };
        Some(if n % 2 == 1 {
            nth(n / 2)
        } else {
            (nth(n / 2 - 1) + nth(n / 2)) / 2.0
        })
    }

    /// Most frequent number of distinct documents per query; the smaller
    /// value wins ties.
    pub fn modal_docs_per_query(&self) -> Option<usize> {
        self.docs_per_query
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&k, _)| k)
    }
}
