use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::json;

use clicklabel::aggregation::{read_pairs, write_pairs, AggregateOptions, AggregatedPair, Aggregator, PAIR_HEADER};
use clicklabel::curation::CurationPolicy;
use clicklabel::dataset::{
    read_documents, read_keyed_values, read_labeled, read_log, read_query_url_pairs, read_scores, read_test_set,
    write_labeled, write_request, ReadOptions, Schema, TestQuery,
};
use clicklabel::evaluation::{
    self, correlation_report, exact_permutation_test, mc_permutation_test, ndcg_at_10, precision_at_10, LabelScheme,
    RankedQuery,
};
use clicklabel::labeling::{label_pairs, LabelConfig, LabelFormula, WeightMode};
use clicklabel::sampling::{build_batches, sample_soft_negatives, NegativePolicy};
use clicklabel::scoring::bm25::{bm25_score, tokenize, Bm25Params, CorpusStats};
use clicklabel::scoring::embedder::{train_toy_embedder, TrainConfig};
use clicklabel::scoring::files::{read_head, write_head, EmbeddingTable};
use clicklabel::scoring::head::InteractionHead;
use clicklabel::simulator::{generate_range, SimConfig, SimCounters, SimTruth};
use clicklabel::stats::StatsCollector;
use clicklabel::Error;

use crate::session::{Session, UsageError};
use crate::*;

/// Queries generated and written per parallel chunk.
const SIM_CHUNK: usize = 2048;

fn read_options(log: &LogInput) -> Result<ReadOptions> {
    let schema = match &log.schema {
        Some(spec) => Schema::parse(spec)?,
        None => Schema::default(),
    };
    Ok(ReadOptions {
        pre_grouped: !log.ungrouped,
        schema,
        ..ReadOptions::default()
    })
}

fn label_config(p: &LabelParams) -> Result<LabelConfig> {
    let cfg = LabelConfig {
        alpha: p.alpha,
        beta: p.beta,
        scale: p.scale,
        rank_c: p.rank_c,
        dwell_missing: p.dwell_missing.parse()?,
        ..LabelConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Prints to the standard output; a closed pipe is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

/// Shortest representation that parses back to the same `f64`.
fn real(x: f64) -> String {
    format!("{x}")
}

pub fn curate(a: CurateArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut s = Session::new("curate", manifest);
    let policy = CurationPolicy {
        min_query_chars: a.min_chars,
        alpha_only: !a.allow_non_alpha,
        min_unique_requests: a.min_requests,
        max_unique_requests: a.max_requests,
        truncate_floor_rank: a.floor_rank,
        rng_seed: a.seed,
    };
    policy.validate()?;
    let input = s.input(&a.input)?;
    let requests = read_log(input, read_options(&a.log)?).collect::<clicklabel::Result<Vec<_>>>()?;
    let requests_in = requests.len();
    let kept = clicklabel::curation::curate(requests, &policy, None)?;

    let schema = Schema::default();
    let mut out = s.output(&a.output)?;
    let mut rows = 0u64;
    writeln!(out, "{}", schema.header())?;
    for r in &kept {
        write_request(&mut out, r, &schema)?;
        rows += r.impressions.len() as u64;
    }
    out.flush()?;
    drop(out);
    s.finish(
        &a,
        Some(a.seed),
        json!({ "requests_in": requests_in, "requests_out": kept.len(), "rows_out": rows }),
    )
}

pub fn aggregate(a: AggregateArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut s = Session::new("aggregate", manifest);
    let mut agg = Aggregator::new(AggregateOptions {
        mem_budget: a.mem_budget,
        spill: !a.no_spill,
        spill_dir: a.spill_dir.clone(),
    });
    let input = s.input(&a.input)?;
    let mut requests = 0u64;
    for r in read_log(input, read_options(&a.log)?) {
        agg.add_request(&r?)?;
        requests += 1;
    }
    let runs = agg.spilled_runs();
    let pairs = agg.finish()?;
    let mut out = s.output(&a.output)?;
    writeln!(out, "{PAIR_HEADER}")?;
    let written = write_pairs(&mut out, pairs)?;
    drop(out);
    s.finish(
        &a,
        None,
        json!({ "requests": requests, "pairs": written, "spilled_runs": runs }),
    )
}

pub fn label(a: LabelArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut s = Session::new("label", manifest);
    let mut cfg = label_config(&a.params)?;
    cfg.weight_mode = match a.weights {
        Weights::None => WeightMode::None,
        Weights::Views => WeightMode::Views,
        Weights::Clicks => WeightMode::Clicks,
    };
    let formula = match a.formula {
        Formula::Clicks => LabelFormula::Clicks,
        Formula::Dwell => LabelFormula::Dwell,
        Formula::Rank => LabelFormula::Rank,
        Formula::Cdr => LabelFormula::ClickDwellRank,
    };
    let input = s.input(&a.input)?;
    let pairs = read_pairs(input).collect::<clicklabel::Result<Vec<_>>>()?;
    cfg.resolve_mean(&pairs);
    let rows = label_pairs(&pairs, formula, &cfg)?;
    let out = s.output(&a.output)?;
    let written = write_labeled(out, rows)?;
    s.finish(
        &a,
        None,
        json!({ "pairs": pairs.len(), "rows": written, "corpus_mean_dwell": cfg.corpus_mean_dwell }),
    )
}

pub fn negatives(a: NegativesArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut s = Session::new("negatives", manifest);
    let observed = read_query_url_pairs(s.input(&a.pairs)?)?;
    let pool = read_documents(s.input(&a.docpool)?)?;
    let mut seen = HashSet::new();
    let queries: Vec<String> = observed
        .iter()
        .filter(|(q, _)| seen.insert(q.as_str()))
        .map(|(q, _)| q.clone())
        .collect();
    let mut policy = NegativePolicy::new(a.k, a.seed);
    policy.exclude_observed(observed.iter().map(|(q, u)| (q.as_str(), u.as_str())));
    let rows = sample_soft_negatives(&queries, &pool, &policy)?;
    let written = write_labeled(s.output(&a.output)?, rows)?;
    s.finish(
        &a,
        Some(a.seed),
        json!({ "queries": queries.len(), "pool": pool.len(), "negatives": written }),
    )
}

pub fn simulate(a: SimulateArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut s = Session::new("simulate", manifest);
    let mut cfg = SimConfig::default();
    if let Some(path) = &a.config {
        let mut text = String::new();
        s.input(path)?.read_to_string(&mut text)?;
        cfg.apply_overrides(&text)?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(n) = a.queries {
        cfg.n_queries = n;
    }
    if let Some(seed) = a.seed {
        cfg.rng_seed = seed;
    }
    cfg.validate()?;

    let schema = Schema::default();
    let mut out = s.output(&a.out)?;
    let mut truth_out = a.truth.as_ref().map(|p| s.output(p)).transpose()?;
    writeln!(out, "{}", schema.header())?;
    if let Some(t) = truth_out.as_mut() {
        writeln!(t, "query\turl\trelevance")?;
    }
    let mut counters = SimCounters::default();
    let mut start = 0;
    while start < cfg.n_queries {
        let end = (start + SIM_CHUNK).min(cfg.n_queries);
        for q in generate_range(&cfg, start..end) {
            for r in &q.requests {
                write_request(&mut out, r, &schema)?;
            }
            if let Some(t) = truth_out.as_mut() {
                for e in &q.truth {
                    writeln!(t, "{}\t{}\t{}", e.query, e.url, real(e.relevance))?;
                }
            }
            counters.requests += q.counters.requests;
            counters.impressions += q.counters.impressions;
            counters.clicks += q.counters.clicks;
            counters.clicks_top3 += q.counters.clicks_top3;
            counters.dwell_known += q.counters.dwell_known;
            counters.dwell_sum += q.counters.dwell_sum;
        }
        start = end;
    }
    out.flush()?;
    if let Some(t) = truth_out.as_mut() {
        t.flush()?;
    }
    drop((out, truth_out));
    s.finish(
        &a,
        Some(cfg.rng_seed),
        json!({
            "queries": cfg.n_queries,
            "requests": counters.requests,
            "impressions": counters.impressions,
            "clicks": counters.clicks,
            "clicks_top3": counters.clicks_top3,
            "dwell_known": counters.dwell_known,
            "dwell_sum": counters.dwell_sum,
            "config": format!("{cfg:?}"),
        }),
    )
}

fn missing(what: &'static str, key: &str) -> anyhow::Error {
    Error::MissingEntry {
        what,
        key: key.to_owned(),
    }
    .into()
}

fn write_scores(out: &mut dyn Write, pairs: &[(String, String)], scores: &[f64]) -> Result<()> {
    for ((q, u), v) in pairs.iter().zip(scores) {
        writeln!(out, "{q}\t{u}\t{}", real(*v))?;
    }
    out.flush()?;
    Ok(())
}

pub fn score(a: ScoreArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut s = Session::new("score", manifest);
    let head = read_head(s.input(&a.head)?)?;
    let table = EmbeddingTable::read(s.input(&a.embeddings)?)?;
    if table.dim != head.dim {
        return Err(Error::ShapeMismatch {
            expected: head.dim,
            found: table.dim,
        }
        .into());
    }
    let index = table.index();
    let pairs = read_query_url_pairs(s.input(&a.pairs)?)?;
    let scores = pairs
        .par_iter()
        .map(|(q, u)| {
            let qv = index.get(q.as_str()).ok_or_else(|| missing("embedding", q))?;
            let dv = index.get(u.as_str()).ok_or_else(|| missing("embedding", u))?;
            Ok(head.forward(qv, dv)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    write_scores(&mut s.output(&a.output)?, &pairs, &scores)?;
    s.finish(&a, None, json!({ "pairs": pairs.len() }))
}

pub fn bm25(a: Bm25Args, manifest: Option<PathBuf>) -> Result<()> {
    let mut s = Session::new("baseline-bm25", manifest);
    let docs = read_documents(s.input(&a.corpus)?)?;
    let tokens: HashMap<&str, Vec<String>> = docs.iter().map(|d| (d.url.as_str(), tokenize(&d.text()))).collect();
    let stats = CorpusStats::from_documents(docs.iter().map(|d| &tokens[d.url.as_str()]))?;
    let params = Bm25Params { k1: a.k1, b: a.b };
    let pairs = read_query_url_pairs(s.input(&a.pairs)?)?;
    let scores = pairs
        .par_iter()
        .map(|(q, u)| {
            let doc = tokens.get(u.as_str()).ok_or_else(|| missing("corpus document", u))?;
            Ok(bm25_score(&tokenize(q), doc, &stats, params)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    write_scores(&mut s.output(&a.output)?, &pairs, &scores)?;
    s.finish(&a, None, json!({ "pairs": pairs.len(), "corpus": docs.len() }))
}

fn metric_fn(m: Metric) -> fn(&RankedQuery) -> f64 {
    match m {
        Metric::Ndcg10 => ndcg_at_10,
        Metric::P10 => precision_at_10,
    }
}

pub fn eval(a: EvalArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut s = Session::new("eval", manifest);
    let test: Vec<TestQuery> = read_test_set(s.input(&a.gold)?)?;
    if test.is_empty() {
        return Err(Error::DegenerateInput("empty test set").into());
    }
    let metric = metric_fn(a.metric);
    let (mean, per_query): (f64, Option<Vec<f64>>) = match (a.baseline, &a.scores) {
        (Some(Baseline::Random), _) => (evaluation::random_baseline_with(&test, a.trials, a.seed, metric), None),
        (Some(Baseline::Oracle), _) => {
            let values: Vec<f64> = evaluation::rank_test_set(&test, |_, _| 0.0)
                .into_iter()
                .zip(&test)
                .map(|(mut rq, q)| {
                    rq.items.iter_mut().zip(&q.pairs).for_each(|(i, p)| i.score = p.label);
                    metric(&rq)
                })
                .collect();
            (evaluation::mean(&values), Some(values))
        }
        (None, Some(path)) => {
            let scores = read_scores(s.input(path)?)?;
            let mut absent = 0usize;
            let ranked = evaluation::rank_test_set(&test, |q, u| match scores.get(&(q.to_owned(), u.to_owned())) {
                Some(&v) => v,
                None => {
                    absent += 1;
                    a.missing_score.unwrap_or(f64::NAN)
                }
            });
            if absent > 0 && a.missing_score.is_none() {
                return Err(Error::Inconsistent(format!(
                    "{absent} test pairs have no score; pass --missing-score to substitute one"
                ))
                .into());
            }
            let values: Vec<f64> = ranked.par_iter().map(metric).collect();
            (evaluation::mean(&values), Some(values))
        }
        (None, None) => return Err(UsageError("either a score file or --baseline is required".into()).into()),
    };
    if let Some(path) = &a.per_query {
        let values = per_query
            .as_ref()
            .ok_or_else(|| UsageError("--per-query is not available for the random baseline".into()))?;
        let mut out = s.output(path)?;
        for (q, v) in test.iter().zip(values) {
            writeln!(out, "{}\t{}", q.query, real(*v))?;
        }
        out.flush()?;
    }
    let summary = json!({ "metric": a.metric, "mean": mean, "queries": test.len() });
    emit(&summary.to_string())?;
    s.finish(&a, Some(a.seed), summary)
}

pub fn sigtest(a: SigtestArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut s = Session::new("sigtest", manifest);
    let va = read_keyed_values(s.input(&a.per_query_a)?)?;
    let vb: HashMap<String, f64> = read_keyed_values(s.input(&a.per_query_b)?)?.into_iter().collect();
    if va.len() != vb.len() {
        return Err(Error::Inconsistent(format!("per-query files have {} and {} rows", va.len(), vb.len())).into());
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = va
        .iter()
        .map(|(q, x)| {
            vb.get(q)
                .map(|y| (*x, *y))
                .ok_or_else(|| missing("second value", q))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let p = if a.exact {
        exact_permutation_test(&xs, &ys)?
    } else {
        mc_permutation_test(&xs, &ys, a.samples, a.seed)?
    };
    let summary = json!({
        "p_value": p,
        "queries": xs.len(),
        "mean_a": evaluation::mean(&xs),
        "mean_b": evaluation::mean(&ys),
        "method": if a.exact { "exact" } else { "monte_carlo" },
    });
    emit(&summary.to_string())?;
    s.finish(&a, Some(a.seed), summary)
}

fn read_gold_labels(text: &str) -> Result<HashMap<(String, String), f64>> {
    if text.starts_with("query\turl\trelevance") {
        let truth = SimTruth::read(text.as_bytes())?;
        return Ok(truth.entries.into_iter().map(|e| ((e.query, e.url), e.relevance)).collect());
    }
    Ok(read_test_set(text.as_bytes())?
        .into_iter()
        .flat_map(|q| q.pairs)
        .map(|p| ((p.query, p.url), p.label))
        .collect())
}

pub fn correlate(a: CorrelateArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut s = Session::new("correlate", manifest);
    let cfg = label_config(&a.params)?;
    let pairs = read_pairs(s.input(&a.pairs)?).collect::<clicklabel::Result<Vec<AggregatedPair>>>()?;
    let mut text = String::new();
    s.input(&a.gold)?
        .read_to_string(&mut text)
        .context("gold labels must be UTF-8")?;
    let gold = read_gold_labels(&text)?;
    let joined: Vec<(&AggregatedPair, f64)> = pairs
        .iter()
        .filter_map(|p| gold.get(&(p.query.clone(), p.url.clone())).map(|&g| (p, g)))
        .collect();
    let rows = correlation_report(&joined, &cfg, &LabelScheme::ALL)?;
    let mut table = Vec::new();
    let mut lines = vec!["scheme\tspearman".to_string()];
    for r in &rows {
        let v = match &r.spearman {
            Ok(v) => real(*v),
            Err(_) => "nan".into(),
        };
        lines.push(format!("{}\t{v}", r.scheme));
        table.push(json!({ "scheme": r.scheme.name(), "spearman": r.spearman.as_ref().ok() }));
    }
    emit(&lines.join("\n"))?;
    s.finish(&a, None, json!({ "joined": joined.len(), "rows": table }))
}

pub fn stats(a: StatsArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut s = Session::new("stats", manifest);
    let mut c = StatsCollector::default();
    for r in read_log(s.input(&a.input)?, read_options(&a.log)?) {
        c.add(&r?);
    }
    let st = c.finish();
    let summary = json!({
        "requests": st.requests,
        "impressions": st.impressions,
        "queries": st.queries,
        "pairs": st.pairs,
        "clicked_pairs": st.clicked_pairs,
        "clicked_pair_fraction": st.clicked_pair_fraction(),
        "unclicked_pair_fraction": st.unclicked_pair_fraction(),
        "clicks": st.clicks,
        "top3_click_share": st.top_click_share(3),
        "dwell_known": st.dwell_count(),
        "dwell_mean": st.dwell_mean(),
        "dwell_median": st.dwell_median(),
        "modal_docs_per_query": st.modal_docs_per_query(),
        "clicks_by_rank": st.clicks_by_rank,
        "impressions_by_rank": st.impressions_by_rank,
        "unranked_clicks": st.unranked_clicks,
        "docs_per_query": st.docs_per_query.iter().map(|(k, v)| (k.to_string(), v)).collect::<std::collections::BTreeMap<_, _>>(),
    });
    emit(&serde_json::to_string_pretty(&summary)?)?;
    s.finish(&a, None, summary)
}

pub fn train_toy(a: TrainToyArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut s = Session::new("train-toy", manifest);
    let rows = read_labeled(s.input(&a.input)?)?;
    let test = a.embed_test.as_ref().map(|p| s.input(p).and_then(|r| Ok(read_test_set(r)?))).transpose()?;

    let batches = build_batches(rows.clone(), a.batch_size, a.seed, |r| r.query.as_str())?;
    let cfg = TrainConfig {
        dim: a.dim,
        buckets: a.buckets,
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
        pointwise_mix: a.mix,
        learn_temperature: !a.fixed_temperature,
    };
    let outcome = train_toy_embedder(&batches, &cfg)?;
    let model = &outcome.embedder;

    let mut texts: Vec<(String, String)> = Vec::new();
    let mut seen = HashSet::new();
    let mut add = |key: &str, text: String| {
        if seen.insert(key.to_owned()) {
            texts.push((key.to_owned(), text));
        }
    };
    for r in &rows {
        add(&r.query, r.query.clone());
        add(&r.url, r.doc_text());
    }
    for q in test.iter().flatten() {
        add(&q.query, q.query.clone());
        for p in &q.pairs {
            add(&p.url, p.doc_text.clone());
        }
    }
    let vectors: Vec<Vec<f64>> = texts.par_iter().map(|(_, t)| model.embed(t)).collect();
    let mut table = EmbeddingTable::new(a.dim);
    for ((key, _), v) in texts.into_iter().zip(vectors) {
        table.push(key, v)?;
    }
    table.write(s.output(&a.out_embeddings)?)?;
    if let Some(path) = &a.out_head {
        write_head(&InteractionHead::cosine_readout(a.dim, a.head_gain), s.output(path)?)?;
    }
    let summary = json!({
        "rows": rows.len(),
        "batches": batches.len(),
        "embeddings": table.entries.len(),
        "temperature": model.temperature.tau(),
        "loss_trace": outcome.loss_trace,
    });
    emit(&summary.to_string())?;
    s.finish(&a, Some(a.seed), summary)
}
