//! Synthetic click logs from a position-bias user model with known relevance.
//!
//! Each query gets a ranked list whose length peaks at one results page. The
//! engine orders documents by true relevance plus noise. A simulated user
//! examines the page top-down: after each position they continue, jump to the
//! next page, or leave; a click may end the session when it satisfies them.
//! Jumps from the middle of a page make the examination probability step up
//! at page boundaries.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng as _;
use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;

use crate::aggregation::{aggregate_par, AggregatedPair};
use crate::curation::{curate, CurationPolicy};
use crate::dataset::{format_sig9, ImpressionRecord, Request, TsvLines};
use crate::error::{Error, Result};
use crate::evaluation::{correlation_report, CorrelationRow, LabelScheme};
use crate::labeling::LabelConfig;
use crate::seed::{self, Rng};

pub const PAGE_SIZE: usize = 10;

/// Probability that an examined document is clicked.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClickRule {
    /// `min + (max − min) · relevance`.
    Linear { min: f64, max: f64 },
    /// Click exactly when relevance exceeds the threshold.
    Threshold(f64),
}

impl ClickRule {
    pub fn probability(self, relevance: f64) -> f64 {
        match self {
            ClickRule::Linear { min, max } => min + (max - min) * relevance,
            ClickRule::Threshold(t) => (relevance > t) as u8 as f64,
        }
    }
}

impl fmt::Display for ClickRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClickRule::Linear { min, max } => write!(f, "linear:{min}:{max}"),
            ClickRule::Threshold(t) => write!(f, "threshold:{t}"),
        }
    }
}

impl FromStr for ClickRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("click rule must be linear:MIN:MAX or threshold:T, got {s:?}"));
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["linear", min, max] => Ok(ClickRule::Linear {
                min: num(min)?,
                max: num(max)?,
            }),
            ["threshold", t] => Ok(ClickRule::Threshold(num(t)?)),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub n_queries: usize,
    pub requests_min: u32,
    pub requests_max: u32,
    /// Ranked list length: `docs_peak` with probability `docs_peak_prob`,
    /// otherwise uniform on `docs_min..=docs_max`.
    pub docs_min: usize,
    pub docs_max: usize,
    pub docs_peak: usize,
    pub docs_peak_prob: f64,
    /// Beta shape of the per-query mean relevance.
    pub quality_a: f64,
    pub quality_b: f64,
    /// Concentration of the per-document Beta around the query mean.
    pub relevance_concentration: f64,
    /// Standard deviation of the per-document engine score noise.
    pub engine_noise: f64,
    /// Additional per-request score noise, so ranks vary between requests.
    pub request_noise: f64,
    /// Standard deviation of the snippet noise: clicks follow the perceived
    /// relevance `clamp(relevance + noise)`, dwell follows true relevance.
    pub attractiveness_noise: f64,
    /// `continuation[i]` is the probability of examining the next position
    /// after position `i` of a page; the last entry is the probability of
    /// turning to the next page after reaching the bottom.
    pub continuation: [f64; PAGE_SIZE],
    /// Probability of jumping straight to the next page instead of leaving.
    pub page_jump: f64,
    pub click_rule: ClickRule,
    /// Probability that a click ends the session: `base + gain · relevance`.
    pub satisfaction_base: f64,
    pub satisfaction_gain: f64,
    /// Dwell seconds are lognormal with `μ = mean + gain · relevance`.
    pub dwell_log_mean: f64,
    pub dwell_log_gain: f64,
    pub dwell_log_sigma: f64,
    pub last_click_dwell_missing_prob: f64,
    /// Generate titles and body extracts; otherwise they are empty.
    pub text: bool,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_queries: 10_000,
            requests_min: 5,
            requests_max: 15,
            docs_min: 1,
            docs_max: 30,
            docs_peak: 10,
            docs_peak_prob: 0.45,
            quality_a: 2.0,
            quality_b: 5.0,
            relevance_concentration: 2.0,
            engine_noise: 0.25,
            request_noise: 0.05,
            attractiveness_noise: 0.35,
            continuation: [0.9, 0.85, 0.8, 0.8, 0.75, 0.75, 0.7, 0.7, 0.7, 0.12],
            page_jump: 0.12,
            click_rule: ClickRule::Linear { min: 0.02, max: 0.9 },
            satisfaction_base: 0.1,
            satisfaction_gain: 0.2,
            dwell_log_mean: 2.3,
            dwell_log_gain: 3.0,
            dwell_log_sigma: 0.9,
            last_click_dwell_missing_prob: 1.0,
            text: true,
            rng_seed: 0,
        }
    }
}

fn probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be in [0, 1], got {p}")))
    }
}

impl SimConfig {
    /// Fully deterministic sessions: no ranking noise, every position
    /// examined, clicks exactly on documents above `threshold`.
    pub fn deterministic(threshold: f64) -> Self {
        SimConfig {
            engine_noise: 0.0,
            request_noise: 0.0,
            attractiveness_noise: 0.0,
            continuation: [1.0; PAGE_SIZE],
            page_jump: 0.0,
            click_rule: ClickRule::Threshold(threshold),
            satisfaction_base: 0.0,
            satisfaction_gain: 0.0,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.requests_min == 0 || self.requests_min > self.requests_max {
            return invalid("need 1 <= requests_min <= requests_max");
        }
        if self.docs_min == 0 || self.docs_min > self.docs_max || !(self.docs_min..=self.docs_max).contains(&self.docs_peak) {
            return invalid("need 1 <= docs_min <= docs_peak <= docs_max");
        }
        for (name, v) in [
            ("quality_a", self.quality_a),
            ("quality_b", self.quality_b),
            ("relevance_concentration", self.relevance_concentration),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("engine_noise", self.engine_noise),
            ("request_noise", self.request_noise),
            ("attractiveness_noise", self.attractiveness_noise),
            ("dwell_log_sigma", self.dwell_log_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        if !(self.dwell_log_mean.is_finite() && self.dwell_log_gain.is_finite()) {
            return invalid("dwell parameters must be finite");
        }
        for (i, &c) in self.continuation[..PAGE_SIZE - 1].iter().enumerate() {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::InvalidConfig(format!("continuation[{i}] must be in (0, 1], got {c}")));
            }
        }
        probability("page turn", self.continuation[PAGE_SIZE - 1])?;
        probability("docs_peak_prob", self.docs_peak_prob)?;
        probability("page_jump", self.page_jump)?;
        probability("last_click_dwell_missing_prob", self.last_click_dwell_missing_prob)?;
        probability("satisfaction_base", self.satisfaction_base)?;
        probability("satisfaction_base + satisfaction_gain", self.satisfaction_base + self.satisfaction_gain)?;
        match self.click_rule {
            ClickRule::Linear { min, max } => {
                probability("click min", min)?;
                probability("click max", max)?;
            }
            ClickRule::Threshold(t) if !t.is_finite() => return invalid("click threshold must be finite"),
            ClickRule::Threshold(_) => {}
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are ignored.
    pub fn apply_overrides(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value {v:?} for {key}")))
        }
        match key {
            "n_queries" => self.n_queries = parse(key, value)?,
            "requests_min" => self.requests_min = parse(key, value)?,
            "requests_max" => self.requests_max = parse(key, value)?,
            "docs_min" => self.docs_min = parse(key, value)?,
            "docs_max" => self.docs_max = parse(key, value)?,
            "docs_peak" => self.docs_peak = parse(key, value)?,
            "docs_peak_prob" => self.docs_peak_prob = parse(key, value)?,
            "quality_a" => self.quality_a = parse(key, value)?,
            "quality_b" => self.quality_b = parse(key, value)?,
            "relevance_concentration" => self.relevance_concentration = parse(key, value)?,
            "engine_noise" => self.engine_noise = parse(key, value)?,
            "request_noise" => self.request_noise = parse(key, value)?,
            "attractiveness_noise" => self.attractiveness_noise = parse(key, value)?,
            "continuation" => {
                let values = value
                    .split(',')
                    .map(|v| parse::<f64>(key, v.trim()))
                    .collect::<Result<Vec<_>>>()?;
                self.continuation = values.try_into().map_err(|v: Vec<f64>| {
                    Error::InvalidConfig(format!("continuation needs {PAGE_SIZE} values, got {}", v.len()))
                })?;
            }
            "page_jump" => self.page_jump = parse(key, value)?,
            "click_rule" => self.click_rule = value.parse()?,
            "satisfaction_base" => self.satisfaction_base = parse(key, value)?,
            "satisfaction_gain" => self.satisfaction_gain = parse(key, value)?,
            "dwell_log_mean" => self.dwell_log_mean = parse(key, value)?,
            "dwell_log_gain" => self.dwell_log_gain = parse(key, value)?,
            "dwell_log_sigma" => self.dwell_log_sigma = parse(key, value)?,
            "last_click_dwell_missing_prob" => self.last_click_dwell_missing_prob = parse(key, value)?,
            "text" => self.text = parse(key, value)?,
            "rng_seed" | "seed" => self.rng_seed = parse(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown simulator key {key:?}"))),
        }
        Ok(())
    }

    /// Probability that position `rank` is examined, ignoring the early
    /// stops caused by satisfying clicks.
    pub fn examination_curve(&self, len: usize) -> Vec<f64> {
        let mut exam = vec![0.0; len];
        if len == 0 {
            return exam;
        }
        exam[0] = 1.0;
        let mut page_entry = 0.0;
        for r in 0..len {
            if r % PAGE_SIZE == 0 && r > 0 {
                exam[r] = page_entry;
                page_entry = 0.0;
            }
            let pos = r % PAGE_SIZE;
            let next_page = (r / PAGE_SIZE + 1) * PAGE_SIZE;
            if pos == PAGE_SIZE - 1 {
                page_entry += exam[r] * self.continuation[pos];
            } else {
                if r + 1 < len {
                    exam[r + 1] = exam[r] * self.continuation[pos];
                }
                if next_page < len {
                    page_entry += exam[r] * (1.0 - self.continuation[pos]) * self.page_jump;
                }
            }
        }
        exam
    }
}

const TOPIC_WORDS: &[&str] = &[
    "recept", "počasí", "vlak", "jízdní", "řád", "koupit", "levné", "bydlení", "praha", "brno", "ostrava",
    "zahrada", "auto", "bazar", "kniha", "film", "hudba", "škola", "práce", "nabídka", "zdraví", "lékař",
    "dovolená", "hory", "moře", "chata", "počítač", "telefon", "oprava", "návod", "cena", "pojištění",
    "hypotéka", "restaurace", "kavárna", "sport", "fotbal", "hokej", "historie", "zámek",
];

const FILLER_WORDS: &[&str] = &[
    "nejlepší", "informace", "stránka", "aktuální", "přehled", "článek", "rady", "tipy", "novinky", "služby",
    "kontakt", "obchod", "katalog", "diskuze", "fórum", "srovnání", "recenze", "zprávy", "portál", "průvodce",
];

const DOMAINS: &[&str] = &["seznam", "idnes", "novinky", "denik", "heureka", "sreality", "wiki", "ceskatelevize"];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "pu", "ra", "se", "to", "vy", "zu", "bě", "čo", "dy", "fa", "há", "ji",
];

/// Letters-only word encoding `index`, unique per index.
fn code_word(mut index: usize) -> String {
    let mut syl = Vec::new();
    while index > 0 || syl.len() < 3 {
        syl.push(SYLLABLES[index % SYLLABLES.len()]);
        index /= SYLLABLES.len();
    }
    syl.concat()
}

fn pick<'a>(rng: &mut Rng, words: &[&'a str]) -> &'a str {
    words[rng.random_range(0..words.len())]
}

fn document_text(rng: &mut Rng, query_words: &[&str], relevance: f64, min_words: usize, max_words: usize) -> String {
    let mut words: Vec<&str> = query_words
        .iter()
        .copied()
        .filter(|_| rng.random_bool(relevance))
        .collect();
    let filler = rng.random_range(min_words..=max_words);
    words.extend((0..filler).map(|_| pick(rng, FILLER_WORDS)));
    words.shuffle(rng);
    words.join(" ")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthEntry {
    pub query: String,
    pub url: String,
    pub relevance: f64,
}

/// Hidden true relevance of every generated query-document pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimTruth {
    pub entries: Vec<TruthEntry>,
}

impl SimTruth {
    pub fn lookup(&self) -> HashMap<(&str, &str), f64> {
        self.entries
            .iter()
            .map(|e| ((e.query.as_str(), e.url.as_str()), e.relevance))
            .collect()
    }

    /// Same pairs with relevance values randomly permuted across them,
    /// decoupling relevance from behavior.
    pub fn shuffled(&self, rng_seed: u64) -> SimTruth {
        let mut values: Vec<f64> = self.entries.iter().map(|e| e.relevance).collect();
        values.shuffle(&mut seed::rng(seed::derive(rng_seed, "sim.truth.shuffle")));
        SimTruth {
            entries: self
                .entries
                .iter()
                .zip(values)
                .map(|(e, relevance)| TruthEntry {
                    relevance,
                    ..e.clone()
                })
                .collect(),
        }
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<u64> {
        writeln!(sink, "query\turl\trelevance")?;
        for e in &self.entries {
            writeln!(sink, "{}\t{}\t{}", e.query, e.url, format_sig9(e.relevance))?;
        }
        sink.flush()?;
        Ok(self.entries.len() as u64)
    }

    pub fn read<R: BufRead>(source: R) -> Result<SimTruth> {
        let mut entries = Vec::new();
        for item in TsvLines::new(source) {
            let (line_no, line) = item?;
            let cols: Vec<&str> = line.split('\t').collect();
            if line_no == 1 && cols.first() == Some(&"query") {
                continue;
            }
            if cols.len() != 3 {
                return Err(Error::MalformedLine {
                    line: line_no,
                    expected: 3,
                    found: cols.len(),
                });
            }
            let relevance = cols[2].parse::<f64>().map_err(|_| Error::FieldParse {
                line: line_no,
                column: "relevance",
                value: cols[2].to_string(),
            })?;
            entries.push(TruthEntry {
                query: cols[0].to_string(),
                url: cols[1].to_string(),
                relevance,
            });
        }
        Ok(SimTruth { entries })
    }
}

/// Counts kept while generating, for cross-checking log statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimCounters {
    pub requests: u64,
    pub impressions: u64,
    pub clicks: u64,
    pub clicks_top3: u64,
    pub dwell_known: u64,
    pub dwell_sum: u64,
}

impl SimCounters {
    fn add(&mut self, o: &SimCounters) {
        self.requests += o.requests;
        self.impressions += o.impressions;
        self.clicks += o.clicks;
        self.clicks_top3 += o.clicks_top3;
        self.dwell_known += o.dwell_known;
        self.dwell_sum += o.dwell_sum;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimQuery {
    pub requests: Vec<Request>,
    pub truth: Vec<TruthEntry>,
    pub counters: SimCounters,
}

struct Doc {
    url: String,
    title: String,
    bte: String,
    relevance: f64,
    attractiveness: f64,
    engine_score: f64,
}

/// Generates query number `index`. Depends only on the config and `index`.
pub fn generate_query(cfg: &SimConfig, index: usize) -> SimQuery {
    let rng = &mut seed::rng(seed::derive_indexed(cfg.rng_seed, "sim.query", index as u64));

    let code = code_word(index);
    let query_words = [pick(rng, TOPIC_WORDS), pick(rng, TOPIC_WORDS)];
    let query = format!("{} {} {}", query_words[0], query_words[1], code);
    let with_code = [query_words[0], query_words[1], code.as_str()];

    let n_docs = if rng.random_bool(cfg.docs_peak_prob) {
        cfg.docs_peak
    } else {
        rng.random_range(cfg.docs_min..=cfg.docs_max)
    };
    let quality = Beta::new(cfg.quality_a, cfg.quality_b).unwrap().sample(rng);
    let k = cfg.relevance_concentration;
    let relevance_dist = Beta::new((k * quality).max(1e-3), (k * (1.0 - quality)).max(1e-3)).unwrap();
    let engine_noise = Normal::new(0.0, cfg.engine_noise).unwrap();
    let request_noise = Normal::new(0.0, cfg.request_noise).unwrap();
    let snippet_noise = Normal::new(0.0, cfg.attractiveness_noise).unwrap();
    let dwell_noise = Normal::new(0.0, 1.0).unwrap();

    let docs: Vec<Doc> = (0..n_docs)
        .map(|j| {
            let relevance = relevance_dist.sample(rng);
            let engine_score = relevance + engine_noise.sample(rng);
            let attractiveness = (relevance + snippet_noise.sample(rng)).clamp(0.0, 1.0);
            let (title, bte) = if cfg.text {
                (
                    document_text(rng, &with_code, relevance, 1, 4),
                    document_text(rng, &with_code, relevance, 6, 18),
                )
            } else {
                (String::new(), String::new())
            };
            Doc {
                url: format!("https://www.{}.cz/{}/{}", pick(rng, DOMAINS), code, j),
                title,
                bte,
                relevance,
                attractiveness,
                engine_score,
            }
        })
        .collect();

    let n_requests = rng.random_range(cfg.requests_min..=cfg.requests_max);
    let mut counters = SimCounters::default();
    let mut requests = Vec::with_capacity(n_requests as usize);
    for r in 0..n_requests {
        let scores: Vec<f64> = docs.iter().map(|d| d.engine_score + request_noise.sample(rng)).collect();
        let mut order: Vec<usize> = (0..n_docs).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

        let mut clicked = vec![false; n_docs];
        let mut shown = n_docs.min(PAGE_SIZE);
        let mut pos = 0;
        loop {
            let doc = &docs[order[pos]];
            let rel = doc.relevance;
            if rng.random::<f64>() < cfg.click_rule.probability(doc.attractiveness) {
                clicked[pos] = true;
                let satisfied = (cfg.satisfaction_base + cfg.satisfaction_gain * rel).clamp(0.0, 1.0);
                if rng.random::<f64>() < satisfied {
                    break;
                }
            }
            if pos + 1 == n_docs {
                break;
            }
            let in_page = pos % PAGE_SIZE;
            let next_page = pos - in_page + PAGE_SIZE;
            if rng.random::<f64>() < cfg.continuation[in_page] {
                pos += 1;
            } else if in_page + 1 < PAGE_SIZE && next_page < n_docs && rng.random::<f64>() < cfg.page_jump {
                pos = next_page;
            } else {
                break;
            }
            shown = shown.max(n_docs.min(pos - pos % PAGE_SIZE + PAGE_SIZE));
        }

        let last_click = clicked.iter().rposition(|&c| c);
        let request_id = format!("q{index}r{r}");
        let impressions = (0..shown)
            .map(|p| {
                let doc = &docs[order[p]];
                let dwell_time = clicked[p]
                    .then(|| {
                        let mu = cfg.dwell_log_mean + cfg.dwell_log_gain * doc.relevance;
                        let seconds = (mu + cfg.dwell_log_sigma * dwell_noise.sample(rng)).exp();
                        let missing = Some(p) == last_click && rng.random_bool(cfg.last_click_dwell_missing_prob);
                        (!missing).then(|| seconds.round().clamp(1.0, u32::MAX as f64) as u32)
                    })
                    .flatten();
                if clicked[p] {
                    counters.clicks += 1;
                    counters.clicks_top3 += (p < 3) as u64;
                }
                if let Some(d) = dwell_time {
                    counters.dwell_known += 1;
                    counters.dwell_sum += d as u64;
                }
                ImpressionRecord {
                    request_id: request_id.clone(),
                    query: query.clone(),
                    url: doc.url.clone(),
                    title: doc.title.clone(),
                    bte: doc.bte.clone(),
                    rank: Some(p as u32),
                    clicks: clicked[p] as u32,
                    dwell_time,
                }
            })
            .collect::<Vec<_>>();
        counters.requests += 1;
        counters.impressions += impressions.len() as u64;
        requests.push(Request::new(request_id, query.clone(), impressions));
    }

    let truth = docs
        .iter()
        .map(|d| TruthEntry {
            query: query.clone(),
            url: d.url.clone(),
            relevance: d.relevance,
        })
        .collect();
    SimQuery {
        requests,
        truth,
        counters,
    }
}

/// Generates queries `range` in parallel, returned in index order.
pub fn generate_range(cfg: &SimConfig, range: std::ops::Range<usize>) -> Vec<SimQuery> {
    range.into_par_iter().map(|i| generate_query(cfg, i)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimLog {
    pub requests: Vec<Request>,
    pub truth: SimTruth,
    pub counters: SimCounters,
}

pub fn generate_log(cfg: &SimConfig) -> Result<SimLog> {
    cfg.validate()?;
    let mut log = SimLog {
        requests: Vec::new(),
        truth: SimTruth::default(),
        counters: SimCounters::default(),
    };
    for q in generate_range(cfg, 0..cfg.n_queries) {
        log.requests.extend(q.requests);
        log.truth.entries.extend(q.truth);
        log.counters.add(&q.counters);
    }
    Ok(log)
}

/// Aggregated pairs of a curated log, joined with their true relevance.
pub fn curated_pairs(requests: Vec<Request>, policy: &CurationPolicy) -> Result<Vec<AggregatedPair>> {
    let curated = curate(requests, policy, None)?;
    Ok(aggregate_par(&curated))
}

/// Spearman of every label scheme against true relevance, best first.
pub fn fidelity_from_pairs(
    pairs: &[AggregatedPair],
    truth: &SimTruth,
    label_cfg: &LabelConfig,
) -> Result<Vec<CorrelationRow>> {
    let lookup = truth.lookup();
    let joined: Vec<(&AggregatedPair, f64)> = pairs
        .iter()
        .map(|p| {
            lookup
                .get(&(p.query.as_str(), p.url.as_str()))
                .map(|&t| (p, t))
                .ok_or_else(|| Error::InvalidConfig(format!("no true relevance for ({}, {})", p.query, p.url)))
        })
        .collect::<Result<_>>()?;
    let mut rows = correlation_report(&joined, label_cfg, &LabelScheme::ALL)?;
    rows.sort_by(|a, b| match (&a.spearman, &b.spearman) {
        (Ok(x), Ok(y)) => y.total_cmp(x),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => std::cmp::Ordering::Equal,
    });
    Ok(rows)
}

/// Generates a log, runs curation and aggregation with default policies and
/// reports each label scheme's Spearman correlation with true relevance.
pub fn fidelity_report(cfg: &SimConfig) -> Result<Vec<CorrelationRow>> {
    let log = generate_log(cfg)?;
    let policy = CurationPolicy {
        rng_seed: cfg.rng_seed,
        ..CurationPolicy::default()
    };
    let pairs = curated_pairs(log.requests, &policy)?;
    fidelity_from_pairs(&pairs, &log.truth, &LabelConfig::default())
}
