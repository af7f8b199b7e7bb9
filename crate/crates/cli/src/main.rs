//! `clicklabel`: click-log curation, pseudo-labeling and ranking evaluation.

mod commands;
mod session;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use session::UsageError;

#[derive(Parser, Debug)]
#[command(name = "clicklabel", version, about, propagate_version = true)]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "CLICKLABEL_THREADS")]
    threads: Option<usize>,

    /// Manifest location; defaults to `<output>.manifest.json` for file outputs.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter queries, truncate result lists and bound requests per query.
    Curate(CurateArgs),
    /// Sum impressions into one row per (query, url).
    Aggregate(AggregateArgs),
    /// Turn aggregated pairs into labeled training rows.
    Label(LabelArgs),
    /// Sample random query-document pairs as label-0 rows.
    Negatives(NegativesArgs),
    /// Generate a synthetic click log with known relevance.
    Simulate(SimulateArgs),
    /// Score pairs with an interaction head over stored embeddings.
    Score(ScoreArgs),
    /// Score pairs with Okapi BM25 over a document corpus.
    #[command(name = "baseline-bm25")]
    Bm25(Bm25Args),
    /// Mean NDCG@10 or P@10 of scores, or of a random/oracle baseline.
    Eval(EvalArgs),
    /// Paired permutation test on per-query metric values.
    Sigtest(SigtestArgs),
    /// Spearman correlation of behavioral label schemes with gold labels.
    Correlate(CorrelateArgs),
    /// Click, dwell and rank statistics of a click log.
    Stats(StatsArgs),
    /// Train the hashed bag-of-tokens embedder on labeled rows.
    #[command(name = "train-toy")]
    TrainToy(TrainToyArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct LogInput {
    /// Column order of header-less input, comma or tab separated.
    #[arg(long)]
    pub schema: Option<String>,
    /// Input rows of one request are not contiguous; group in memory.
    #[arg(long)]
    pub ungrouped: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct CurateArgs {
    #[arg(long, default_value_t = 10)]
    pub min_chars: usize,
    /// Allow characters other than letters and spaces in queries.
    #[arg(long)]
    pub allow_non_alpha: bool,
    #[arg(long, default_value_t = 5)]
    pub min_requests: usize,
    #[arg(long, default_value_t = 15)]
    pub max_requests: usize,
    /// Results up to this 0-based rank are always kept.
    #[arg(long, default_value_t = 4)]
    pub floor_rank: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub log: LogInput,
    #[arg(default_value = "-")]
    pub input: PathBuf,
    #[arg(default_value = "-")]
    pub output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct AggregateArgs {
    /// Approximate bytes of in-memory pairs before spilling sorted runs.
    #[arg(long)]
    pub mem_budget: Option<usize>,
    /// Fail instead of spilling when the budget is exceeded.
    #[arg(long)]
    pub no_spill: bool,
    #[arg(long)]
    pub spill_dir: Option<PathBuf>,
    #[command(flatten)]
    pub log: LogInput,
    #[arg(default_value = "-")]
    pub input: PathBuf,
    #[arg(default_value = "-")]
    pub output: PathBuf,
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct LabelParams {
    /// Weight of non-last clicks.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Weight of last clicks.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Scale applied after the logarithm.
    #[arg(long = "s", default_value_t = 0.05)]
    pub scale: f64,
    /// Rank smoothing constant.
    #[arg(long = "c", default_value_t = 100.0)]
    pub rank_c: f64,
    /// zero, mean or const:V
    #[arg(long, default_value = "const:20")]
    pub dwell_missing: String,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Formula {
    Clicks,
    Dwell,
    Rank,
    Cdr,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Weights {
    None,
    Views,
    Clicks,
}

#[derive(Args, Debug, Serialize)]
pub struct LabelArgs {
    #[arg(long, value_enum, default_value_t = Formula::Cdr)]
    pub formula: Formula,
    #[command(flatten)]
    pub params: LabelParams,
    #[arg(long, value_enum, default_value_t = Weights::None)]
    pub weights: Weights,
    #[arg(default_value = "-")]
    pub input: PathBuf,
    #[arg(default_value = "-")]
    pub output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct NegativesArgs {
    /// Negatives per query.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Aggregated or labeled pairs; their queries get negatives and their
    /// pairs are never sampled.
    pub pairs: PathBuf,
    /// Documents as `url [title [bte]]`.
    pub docpool: PathBuf,
    #[arg(default_value = "-")]
    pub output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key = value` overrides of the simulator configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single override, e.g. `--set engine_noise=0.1`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    /// Where to write `query url relevance` ground truth.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    pub pairs: PathBuf,
    #[arg(default_value = "-")]
    pub output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct Bm25Args {
    #[arg(long, default_value_t = 1.2)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.75)]
    pub b: f64,
    /// Documents as `url [title [bte]]`.
    pub corpus: PathBuf,
    pub pairs: PathBuf,
    #[arg(default_value = "-")]
    pub output: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ndcg10,
    P10,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Random,
    Oracle,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value_t = Metric::Ndcg10)]
    pub metric: Metric,
    /// Evaluate a baseline instead of a score file.
    #[arg(long, value_enum, conflicts_with = "scores")]
    pub baseline: Option<Baseline>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Score used for test pairs absent from the score file; without it
    /// missing scores are an error.
    #[arg(long)]
    pub missing_score: Option<f64>,
    /// Write `query value` rows for `sigtest`.
    #[arg(long)]
    pub per_query: Option<PathBuf>,
    /// Test set as `query url doc label`.
    pub gold: PathBuf,
    /// `query url score` rows.
    #[arg(required_unless_present = "baseline")]
    pub scores: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SigtestArgs {
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Enumerate all sign flips instead of sampling (at most 24 queries).
    #[arg(long)]
    pub exact: bool,
    pub per_query_a: PathBuf,
    pub per_query_b: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub params: LabelParams,
    pub pairs: PathBuf,
    /// Test set as `query url doc label`, or `query url relevance` truth.
    pub gold: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct StatsArgs {
    #[command(flatten)]
    pub log: LogInput,
    #[arg(default_value = "-")]
    pub input: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainToyArgs {
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 4096)]
    pub buckets: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Weight of the pointwise squared-error term.
    #[arg(long, default_value_t = 0.0)]
    pub mix: f64,
    #[arg(long)]
    pub fixed_temperature: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Gain of the cosine read-out head written next to the embeddings.
    #[arg(long, default_value_t = 10.0)]
    pub head_gain: f64,
    /// Labeled training rows.
    pub input: PathBuf,
    /// Embeddings of every query and document seen.
    #[arg(long)]
    pub out_embeddings: PathBuf,
    #[arg(long)]
    pub out_head: Option<PathBuf>,
    /// Also embed the queries and documents of this test set.
    #[arg(long)]
    pub embed_test: Option<PathBuf>,
}

/// Exit status: 2 for usage errors, 3 for malformed or inconsistent data,
/// 4 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<clicklabel::Error>() {
            return match e {
                clicklabel::Error::InvalidConfig(_) => 2,
                e if e.is_data_error() => 3,
                _ => 4,
            };
        }
    }
    4
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(cli);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            let kind = match code {
                2 => "usage",
                3 => "data",
                _ => "internal",
            };
            let report = serde_json::json!({
                "error": kind,
                "message": format!("{err:#}"),
                "exit_code": code,
            });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let m = cli.manifest;
    match cli.command {
        Command::Curate(a) => commands::curate(a, m),
        Command::Aggregate(a) => commands::aggregate(a, m),
        Command::Label(a) => commands::label(a, m),
        Command::Negatives(a) => commands::negatives(a, m),
        Command::Simulate(a) => commands::simulate(a, m),
        Command::Score(a) => commands::score(a, m),
        Command::Bm25(a) => commands::bm25(a, m),
        Command::Eval(a) => commands::eval(a, m),
        Command::Sigtest(a) => commands::sigtest(a, m),
        Command::Correlate(a) => commands::correlate(a, m),
        Command::Stats(a) => commands::stats(a, m),
        Command::TrainToy(a) => commands::train_toy(a, m),
    }
}
