//! Per-(query, url) summation of clicks, dwell times and ranks.
//!
//! Summation is the only aggregation offered. Partial aggregates merge by
//! field-wise addition, which is associative and commutative, so shards can be
//! aggregated independently and combined in any order.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::PathBuf;

use rayon::prelude::*;

use crate::dataset::{Request, TsvLines};
use crate::error::{Error, Result};

/// Behavior sums for one unique query-document pair.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct AggregatedPair {
    pub query: String,
    pub url: String,
    pub title: String,
    pub bte: String,
    pub views: u64,
    pub clicks_total: u64,
    pub nonlast_clicks: u64,
    pub last_clicks: u64,
    pub dwell_total: u64,
    pub dwell_known: u64,
    pub rank_sum: u64,
    pub rank_known: u64,
}

pub const PAIR_HEADER: &str = "query\turl\ttitle\tbte\tviews\tclicks_total\tnonlast_clicks\tlast_clicks\tdwell_total\tdwell_known\trank_sum\trank_known";

impl AggregatedPair {
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.clicks_total != self.nonlast_clicks + self.last_clicks {
            return Err("clicks_total differs from nonlast_clicks + last_clicks".into());
        }
        if self.views == 0 {
            return Err("views must be at least 1".into());
        }
        if self.dwell_known > self.views || self.rank_known > self.views {
            return Err("dwell_known and rank_known cannot exceed views".into());
        }
        Ok(())
    }

    /// Adds the sums of `other`, which must describe the same pair.
    pub fn merge(&mut self, other: &AggregatedPair) {
        debug_assert!(self.query == other.query && self.url == other.url);
        self.views += other.views;
        self.clicks_total += other.clicks_total;
        self.nonlast_clicks += other.nonlast_clicks;
        self.last_clicks += other.last_clicks;
        self.dwell_total += other.dwell_total;
        self.dwell_known += other.dwell_known;
        self.rank_sum += other.rank_sum;
        self.rank_known += other.rank_known;
        // Text choice must not depend on merge order.
        if (&other.title, &other.bte) > (&self.title, &self.bte) {
            self.title.clone_from(&other.title);
            self.bte.clone_from(&other.bte);
        }
    }

    fn key_cmp(&self, other: &AggregatedPair) -> Ordering {
        (&self.query, &self.url).cmp(&(&other.query, &other.url))
    }

    fn approx_bytes(&self) -> usize {
        self.query.len() + self.url.len() + self.title.len() + self.bte.len() + 192
    }
}

/// Marks the last click of a request.
///
/// The log has no click timestamps. The last click is the unique clicked
/// impression without a dwell time, if there is exactly one; otherwise the
/// clicked impression with the greatest rank.
pub fn designate_last_click(request: &Request) -> Vec<bool> {
    let mut flags = vec![false; request.impressions.len()];
    let clicked: Vec<usize> = (0..flags.len())
        .filter(|&i| request.impressions[i].clicks > 0)
        .collect();
    if clicked.is_empty() {
        return flags;
    }
    let missing: Vec<usize> = clicked
        .iter()
        .copied()
        .filter(|&i| request.impressions[i].dwell_time.is_none())
        .collect();
    let last = if missing.len() == 1 {
        missing[0]
    } else {
        *clicked
            .iter()
            .max_by_key(|&&i| request.impressions[i].rank)
            .unwrap()
    };
    flags[last] = true;
    flags
}

/// Per-impression contributions of one request.
pub fn request_contributions(request: &Request) -> impl Iterator<Item = AggregatedPair> + '_ {
    let last = designate_last_click(request);
    request.impressions.iter().zip(last).map(|(r, is_last)| {
        let clicks = r.clicks as u64;
        let last_clicks = if is_last { clicks.min(1) } else { 0 };
        AggregatedPair {
            query: r.query.clone(),
            url: r.url.clone(),
            title: r.title.clone(),
            bte: r.bte.clone(),
            views: 1,
            clicks_total: clicks,
            nonlast_clicks: clicks - last_clicks,
            last_clicks,
            dwell_total: r.dwell_time.unwrap_or(0) as u64,
            dwell_known: r.dwell_time.is_some() as u64,
            rank_sum: r.rank.unwrap_or(0) as u64,
            rank_known: r.rank.is_some() as u64,
        }
    })
}

type PairMap = HashMap<(String, String), AggregatedPair>;

fn absorb(map: &mut PairMap, pair: AggregatedPair) -> usize {
    match map.get_mut(&(pair.query.clone(), pair.url.clone())) {
        Some(acc) => {
            acc.merge(&pair);
            0
        }
        None => {
            let bytes = pair.approx_bytes() + pair.query.len() + pair.url.len();
            map.insert((pair.query.clone(), pair.url.clone()), pair);
            bytes
        }
    }
}

fn merge_maps(mut a: PairMap, b: PairMap) -> PairMap {
    if a.len() < b.len() {
        return merge_maps(b, a);
    }
    for (_, pair) in b {
        absorb(&mut a, pair);
    }
    a
}

fn sorted(map: PairMap) -> Vec<AggregatedPair> {
    let mut pairs: Vec<_> = map.into_values().collect();
    pairs.sort_unstable_by(AggregatedPair::key_cmp);
    pairs
}

/// Single-pass in-memory aggregation, sorted by query then url.
pub fn aggregate<I>(requests: I) -> Vec<AggregatedPair>
where
    I: IntoIterator<Item = Request>,
{
    let mut map = PairMap::new();
    for request in requests {
        for pair in request_contributions(&request) {
            absorb(&mut map, pair);
        }
    }
    sorted(map)
}

/// Shard-parallel aggregation on the current rayon pool. The result does not
/// depend on the number of threads.
pub fn aggregate_par(requests: &[Request]) -> Vec<AggregatedPair> {
    let map = requests
        .par_chunks(2048)
        .map(|chunk| {
            let mut map = PairMap::new();
            for request in chunk {
                for pair in request_contributions(request) {
                    absorb(&mut map, pair);
                }
            }
            map
        })
        .reduce(PairMap::new, merge_maps);
    sorted(map)
}

/// Merges partial aggregates (e.g. from shards) into one sorted list.
pub fn merge_aggregates<I>(shards: I) -> Vec<AggregatedPair>
where
    I: IntoIterator<Item = Vec<AggregatedPair>>,
{
    let mut map = PairMap::new();
    for shard in shards {
        for pair in shard {
            absorb(&mut map, pair);
        }
    }
    sorted(map)
}

#[derive(Clone, Debug, Default)]
pub struct AggregateOptions {
    /// Approximate byte budget of the in-memory pair table.
    pub mem_budget: Option<usize>,
    /// Spill sorted runs to disk when the budget is exceeded. When false,
    /// exceeding the budget is an error.
    pub spill: bool,
    /// Directory for spill files; the system temp directory by default.
    pub spill_dir: Option<PathBuf>,
}

/// Streaming aggregator with external-memory spilling.
///
/// When the table outgrows the budget it is written to a temporary file as a
/// run sorted by (query, url). [`finish`](Aggregator::finish) merges the runs,
/// combining equal keys, so the output is sorted either way.
pub struct Aggregator {
    options: AggregateOptions,
    map: PairMap,
    bytes: usize,
    runs: Vec<File>,
}

impl Aggregator {
    pub fn new(options: AggregateOptions) -> Self {
        Aggregator {
            options,
            map: PairMap::new(),
            bytes: 0,
            runs: Vec::new(),
        }
    }

    pub fn spilled_runs(&self) -> usize {
        self.runs.len()
    }

    pub fn add_request(&mut self, request: &Request) -> Result<()> {
        for pair in request_contributions(request) {
            self.add_pair(pair)?;
        }
        Ok(())
    }

    pub fn add_pair(&mut self, pair: AggregatedPair) -> Result<()> {
        self.bytes += absorb(&mut self.map, pair);
        if let Some(budget) = self.options.mem_budget {
            if self.bytes > budget {
                if !self.options.spill {
                    return Err(Error::Capacity { budget });
                }
                self.spill()?;
            }
        }
        Ok(())
    }

    fn spill(&mut self) -> Result<()> {
        let map = std::mem::take(&mut self.map);
        self.bytes = 0;
        let mut file = match &self.options.spill_dir {
            Some(dir) => tempfile::tempfile_in(dir)?,
            None => tempfile::tempfile()?,
        };
        {
            let mut w = BufWriter::new(&mut file);
            for pair in sorted(map) {
                w.write_all(format_pair_line(&pair).as_bytes())?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        file.seek(SeekFrom::Start(0))?;
        self.runs.push(file);
        Ok(())
    }

    pub fn finish(mut self) -> Result<PairStream> {
        if self.runs.is_empty() {
            return Ok(PairStream::Memory(sorted(self.map).into_iter()));
        }
        if !self.map.is_empty() {
            self.spill()?;
        }
        let mut sources = Vec::with_capacity(self.runs.len());
        for file in self.runs {
            sources.push(TsvLines::new(BufReader::new(file)));
        }
        let mut merge = RunMerge {
            sources,
            heap: BinaryHeap::new(),
            current: Vec::new(),
        };
        for i in 0..merge.sources.len() {
            merge.refill(i)?;
        }
        Ok(PairStream::Merge(merge))
    }
}

/// Sorted output of an [`Aggregator`].
pub enum PairStream {
    Memory(std::vec::IntoIter<AggregatedPair>),
    Merge(RunMerge),
}

impl Iterator for PairStream {
    type Item = Result<AggregatedPair>;

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            PairStream::Memory(it) => it.next().map(Ok),
            PairStream::Merge(m) => m.next_pair().transpose(),
        }
    }
}

pub struct RunMerge {
    sources: Vec<TsvLines<BufReader<File>>>,
    heap: BinaryHeap<Reverse<(String, String, usize)>>,
    current: Vec<Option<AggregatedPair>>,
}

impl RunMerge {
    fn refill(&mut self, i: usize) -> Result<()> {
        if self.current.len() <= i {
            self.current.resize(i + 1, None);
        }
        match self.sources[i].next() {
            Some(item) => {
                let (line_no, line) = item?;
                let pair = parse_pair_line(&line, line_no)?;
                self.heap
                    .push(Reverse((pair.query.clone(), pair.url.clone(), i)));
                self.current[i] = Some(pair);
            }
            None => self.current[i] = None,
        }
        Ok(())
    }

    fn pop(&mut self) -> Result<Option<AggregatedPair>> {
        let Some(Reverse((_, _, i))) = self.heap.pop() else {
            return Ok(None);
        };
        let pair = self.current[i].take();
        self.refill(i)?;
        Ok(pair)
    }

    fn next_pair(&mut self) -> Result<Option<AggregatedPair>> {
        let Some(mut acc) = self.pop()? else {
            return Ok(None);
        };
        while let Some(Reverse((q, u, _))) = self.heap.peek() {
            if *q != acc.query || *u != acc.url {
                break;
            }
            let next = self.pop()?.expect("heap entry without pair");
            acc.merge(&next);
        }
        Ok(Some(acc))
    }
}

pub fn format_pair_line(p: &AggregatedPair) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        p.query,
        p.url,
        p.title,
        p.bte,
        p.views,
        p.clicks_total,
        p.nonlast_clicks,
        p.last_clicks,
        p.dwell_total,
        p.dwell_known,
        p.rank_sum,
        p.rank_known
    )
}

pub fn parse_pair_line(line: &str, line_no: u64) -> Result<AggregatedPair> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 12 {
        return Err(Error::MalformedLine {
            line: line_no,
            expected: 12,
            found: f.len(),
        });
    }
    const NAMES: [&str; 8] = [
        "views",
        "clicks_total",
        "nonlast_clicks",
        "last_clicks",
        "dwell_total",
        "dwell_known",
        "rank_sum",
        "rank_known",
    ];
    let mut n = [0u64; 8];
    for (k, slot) in n.iter_mut().enumerate() {
        *slot = f[4 + k].parse().map_err(|_| Error::FieldParse {
            line: line_no,
            column: NAMES[k],
            value: f[4 + k].to_owned(),
        })?;
    }
    let pair = AggregatedPair {
        query: f[0].to_owned(),
        url: f[1].to_owned(),
        title: f[2].to_owned(),
        bte: f[3].to_owned(),
        views: n[0],
        clicks_total: n[1],
        nonlast_clicks: n[2],
        last_clicks: n[3],
        dwell_total: n[4],
        dwell_known: n[5],
        rank_sum: n[6],
        rank_known: n[7],
    };
    pair.check().map_err(|message| Error::InvariantViolation {
        line: line_no,
        message,
    })?;
    Ok(pair)
}

/// Reads an aggregate file; an optional header row is skipped.
pub fn read_pairs<R: BufRead>(source: R) -> impl Iterator<Item = Result<AggregatedPair>> {
    TsvLines::new(source).filter_map(|item| match item {
        Err(e) => Some(Err(e)),
        Ok((1, line)) if line == PAIR_HEADER => None,
        Ok((line_no, line)) => Some(parse_pair_line(&line, line_no)),
    })
}

pub fn write_pairs<W: Write, I>(mut sink: W, pairs: I) -> Result<u64>
where
    I: IntoIterator<Item = Result<AggregatedPair>>,
{
    let mut rows = 0;
    for pair in pairs {
        let pair = pair?;
        sink.write_all(format_pair_line(&pair).as_bytes())
            .and_then(|_| sink.write_all(b"\n"))
            .map_err(|source| Error::Io { rows, source })?;
        rows += 1;
    }
    sink.flush().map_err(|source| Error::Io { rows, source })?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ImpressionRecord;

    fn imp(id: &str, url: &str, rank: Option<u32>, clicks: u32, dwell: Option<u32>) -> ImpressionRecord {
        ImpressionRecord {
            request_id: id.into(),
            query: "automatic parking".into(),
            url: url.into(),
            title: format!("title {url}"),
            bte: String::new(),
            rank,
            clicks,
            dwell_time: dwell,
        }
    }

    fn req(id: &str, imps: Vec<ImpressionRecord>) -> Request {
        Request::new(id.into(), "automatic parking".into(), imps)
    }

    #[test]
    fn last_click_prefers_missing_dwell() {
        let r = req(
            "a",
            vec![
                imp("a", "u0", Some(0), 1, Some(116)),
                imp("a", "u3", Some(3), 0, None),
                imp("a", "u7", Some(7), 1, None),
            ],
        );
        assert_eq!(designate_last_click(&r), [false, false, true]);
    }

    #[test]
    fn last_click_without_clicks_or_missing_dwell() {
        let r = req("a", vec![imp("a", "u0", Some(0), 0, None), imp("a", "u1", Some(1), 0, None)]);
        assert_eq!(designate_last_click(&r), [false, false]);

        // every combination of dwell presence on two clicked impressions
        for (d0, d1, expect) in [
            (Some(5), Some(9), [false, true]),
            (None, Some(9), [true, false]),
            (Some(5), None, [false, true]),
            (None, None, [false, true]),
        ] {
            let r = req("a", vec![imp("a", "u2", Some(2), 1, d0), imp("a", "u6", Some(6), 1, d1)]);
            assert_eq!(designate_last_click(&r), expect, "{d0:?} {d1:?}");
        }
    }

    #[test]
    fn multi_click_last_impression_splits_counts() {
        let r = req("a", vec![imp("a", "u0", Some(0), 3, None)]);
        let pairs = aggregate(vec![r]);
        assert_eq!(pairs[0].last_clicks, 1);
        assert_eq!(pairs[0].nonlast_clicks, 2);
        assert_eq!(pairs[0].clicks_total, 3);
    }

    #[test]
    fn sums_over_requests() {
        let a = req("a", vec![imp("a", "u", Some(0), 1, Some(116))]);
        let b = req("b", vec![imp("b", "u", Some(2), 0, None), imp("b", "v", None, 0, None)]);
        let pairs = aggregate(vec![a, b]);
        assert_eq!(pairs.len(), 2);
        let u = &pairs[0];
        assert_eq!((u.views, u.clicks_total, u.dwell_total, u.dwell_known), (2, 1, 116, 1));
        assert_eq!((u.rank_sum, u.rank_known), (2, 2));
        assert_eq!((u.last_clicks, u.nonlast_clicks), (1, 0));
        let v = &pairs[1];
        assert_eq!((v.views, v.rank_sum, v.rank_known), (1, 0, 0));
    }

    #[test]
    fn pair_line_round_trip_and_validation() {
        let p = AggregatedPair {
            query: "q".into(),
            url: "u".into(),
            title: "ť".into(),
            bte: "".into(),
            views: 3,
            clicks_total: 2,
            nonlast_clicks: 1,
            last_clicks: 1,
            dwell_total: 40,
            dwell_known: 1,
            rank_sum: 3,
            rank_known: 3,
        };
        assert_eq!(parse_pair_line(&format_pair_line(&p), 1).unwrap(), p);
        let bad = AggregatedPair {
            clicks_total: 5,
            ..p.clone()
        };
        assert!(parse_pair_line(&format_pair_line(&bad), 1).is_err());
        let text = format!("{PAIR_HEADER}\n{}\n", format_pair_line(&p));
        let back: Vec<_> = read_pairs(text.as_bytes()).collect::<Result<_>>().unwrap();
        assert_eq!(back, vec![p]);
    }

    fn synthetic(n: usize) -> Vec<Request> {
        (0..n)
            .map(|i| {
                let id = format!("r{i}");
                let imps = (0..6u32)
                    .map(|k| {
                        let url = format!("u{}", (i * 7 + k as usize * 3) % 23);
                        let clicks = ((i + k as usize) % 4 == 0) as u32;
                        let dwell = (clicks > 0 && k % 2 == 0).then_some(10 * k + 1);
                        imp(&id, &url, Some(k), clicks, dwell)
                    })
                    .collect();
                req(&id, imps)
            })
            .collect()
    }

    #[test]
    fn spilling_matches_in_memory() {
        let reqs = synthetic(400);
        let expected = aggregate(reqs.clone());
        let mut agg = Aggregator::new(AggregateOptions {
            mem_budget: Some(2_000),
            spill: true,
            spill_dir: None,
        });
        for r in &reqs {
            agg.add_request(r).unwrap();
        }
        assert!(agg.spilled_runs() > 3);
        let got: Vec<_> = agg.finish().unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(got, expected);
        assert_eq!(aggregate_par(&reqs), expected);
    }

    #[test]
    fn budget_without_spill_is_capacity_error() {
        let mut agg = Aggregator::new(AggregateOptions {
            mem_budget: Some(500),
            spill: false,
            spill_dir: None,
        });
        let err = synthetic(50)
            .iter()
            .try_for_each(|r| agg.add_request(r))
            .unwrap_err();
        assert!(matches!(err, Error::Capacity { budget: 500 }));
    }
}
