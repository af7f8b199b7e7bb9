//! Spearman rank correlation and the label-scheme correlation report.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::aggregation::AggregatedPair;
use crate::dataset::TestQuery;
use crate::error::{Error, Result};
use crate::labeling::{
    click_dwell_rank_label, click_label, effective_dwell, rank_label, weighted_clicks, DwellMissing, LabelConfig,
};

/// 1-based ranks with ties replaced by their average rank.
pub fn average_ranks(xs: &[f64]) -> Result<Vec<f64>> {
    if let Some(&x) = xs.iter().find(|x| x.is_nan()) {
        return Err(Error::NonFinite(x));
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    Ok(ranks)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateInput("fewer than two observations"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("constant input"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    pearson(&average_ranks(xs)?, &average_ranks(ys)?)
}

/// Behavioral signals compared against gold relevance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LabelScheme {
    Rank,
    /// Total dwell time, unknown dwell counted as 0.
    DwellZero,
    Clicks,
    /// Total dwell time, unknown dwell replaced by the corpus mean.
    DwellMean,
    /// `DwellMean × (weighted clicks + rank term)`.
    DwellMeanTimesClicksRank,
    ClickDwellRank,
}

impl LabelScheme {
    pub const ALL: [LabelScheme; 6] = [
        LabelScheme::Rank,
        LabelScheme::DwellZero,
        LabelScheme::Clicks,
        LabelScheme::DwellMean,
        LabelScheme::DwellMeanTimesClicksRank,
        LabelScheme::ClickDwellRank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LabelScheme::Rank => "rank",
            LabelScheme::DwellZero => "dwell_nan_zero",
            LabelScheme::Clicks => "clicks",
            LabelScheme::DwellMean => "dwell_nan_mean",
            LabelScheme::DwellMeanTimesClicksRank => "dwell_mean_x_clicks_rank",
            LabelScheme::ClickDwellRank => "click_dwell_rank",
        }
    }

    /// Scheme value of one pair. `cfg.corpus_mean_dwell` must be resolved for
    /// the mean-imputing schemes.
    pub fn value(self, pair: &AggregatedPair, cfg: &LabelConfig) -> Result<f64> {
        let with = |policy| LabelConfig {
            dwell_missing: policy,
            ..cfg.clone()
        };
        Ok(match self {
            LabelScheme::Rank => rank_label(pair, cfg),
            LabelScheme::DwellZero => effective_dwell(pair, &with(DwellMissing::Zero))?,
            LabelScheme::Clicks => click_label(pair, cfg),
            LabelScheme::DwellMean => effective_dwell(pair, &with(DwellMissing::Mean))?,
            LabelScheme::DwellMeanTimesClicksRank => {
                effective_dwell(pair, &with(DwellMissing::Mean))? * (weighted_clicks(pair, cfg) + rank_label(pair, cfg))
            }
            LabelScheme::ClickDwellRank => click_dwell_rank_label(pair, cfg),
        })
    }
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LabelScheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown label scheme {s:?}")))
    }
}

#[derive(Debug)]
pub struct CorrelationRow {
    pub scheme: LabelScheme,
    pub spearman: Result<f64>,
}

/// Pairs that have a gold label, in input order.
pub fn join_gold<'a>(pairs: &'a [AggregatedPair], gold: &[TestQuery]) -> Vec<(&'a AggregatedPair, f64)> {
    let labels: HashMap<(&str, &str), f64> = gold
        .iter()
        .flat_map(|q| q.pairs.iter().map(|p| ((p.query.as_str(), p.url.as_str()), p.label)))
        .collect();
    pairs
        .iter()
        .filter_map(|p| labels.get(&(p.query.as_str(), p.url.as_str())).map(|&g| (p, g)))
        .collect()
}

/// Spearman of each scheme against the gold value. When `cfg` has no
/// resolved corpus mean dwell, it is computed from the joined pairs.
pub fn correlation_report(
    joined: &[(&AggregatedPair, f64)],
    cfg: &LabelConfig,
    schemes: &[LabelScheme],
) -> Result<Vec<CorrelationRow>> {
    if joined.is_empty() {
        return Err(Error::DegenerateInput("no pairs joined with gold labels"));
    }
    let mut cfg = cfg.clone();
    if cfg.corpus_mean_dwell.is_none() {
        cfg.resolve_mean(joined.iter().map(|(p, _)| *p));
    }
    let gold: Vec<f64> = joined.iter().map(|(_, g)| *g).collect();
    schemes
        .iter()
        .map(|&scheme| {
            let values = joined
                .iter()
                .map(|(p, _)| scheme.value(p, &cfg))
                .collect::<Result<Vec<_>>>()?;
            Ok(CorrelationRow {
                scheme,
                spearman: spearman(&values, &gold),
            })
        })
        .collect()
}
