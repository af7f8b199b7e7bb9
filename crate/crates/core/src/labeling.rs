//! Relevance pseudo-labels and loss weights computed from aggregated pairs.
//!
//! All logarithms are natural logarithms.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::aggregation::AggregatedPair;
use crate::dataset::LabeledRow;
use crate::error::{Error, Result};

/// Value substituted for the total dwell time of pairs without any known
/// dwell time, used by the dwell-only label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DwellMissing {
    Zero,
    /// Mean `dwell_total` over the corpus pairs that have a known dwell time.
    Mean,
    Constant(f64),
}

impl FromStr for DwellMissing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(DwellMissing::Zero),
            "mean" => Ok(DwellMissing::Mean),
            _ => match s.strip_prefix("const:").map(str::parse::<f64>) {
                Some(Ok(v)) if v >= 0.0 && v.is_finite() => Ok(DwellMissing::Constant(v)),
                _ => Err(Error::InvalidConfig(format!(
                    "dwell-missing policy must be zero, mean or const:V with V >= 0, got `{s}`"
                ))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    None,
    Views,
    Clicks,
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(WeightMode::None),
            "views" => Ok(WeightMode::Views),
            "clicks" => Ok(WeightMode::Clicks),
            _ => Err(Error::InvalidConfig(format!("unknown weight mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelFormula {
    Clicks,
    Dwell,
    Rank,
    ClickDwellRank,
}

impl FromStr for LabelFormula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clicks" => Ok(LabelFormula::Clicks),
            "dwell" => Ok(LabelFormula::Dwell),
            "rank" => Ok(LabelFormula::Rank),
            "cdr" => Ok(LabelFormula::ClickDwellRank),
            _ => Err(Error::InvalidConfig(format!("unknown label formula `{s}`"))),
        }
    }
}

impl fmt::Display for LabelFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelFormula::Clicks => "clicks",
            LabelFormula::Dwell => "dwell",
            LabelFormula::Rank => "rank",
            LabelFormula::ClickDwellRank => "cdr",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelConfig {
    /// Weight of non-last clicks.
    pub alpha: f64,
    /// Weight of last clicks.
    pub beta: f64,
    /// Scale applied inside the clip of the logarithmic labels.
    pub scale: f64,
    /// Additive constant of the rank denominator.
    pub rank_c: f64,
    pub dwell_missing: DwellMissing,
    pub weight_mode: WeightMode,
    /// Resolved value for [`DwellMissing::Mean`], see
    /// [`LabelConfig::resolve_mean`].
    pub corpus_mean_dwell: Option<f64>,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            alpha: 1.0,
            beta: 1.0,
            scale: 1.0 / 20.0,
            rank_c: 100.0,
            dwell_missing: DwellMissing::Constant(20.0),
            weight_mode: WeightMode::None,
            corpus_mean_dwell: None,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.alpha) || !finite_nonneg(self.beta) {
            return Err(Error::InvalidConfig("alpha and beta must be finite and >= 0".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig("scale must be > 0".into()));
        }
        if !(self.rank_c > 0.0 && self.rank_c.is_finite()) {
            return Err(Error::InvalidConfig("rank constant must be > 0".into()));
        }
        if let DwellMissing::Constant(v) = self.dwell_missing {
            if !finite_nonneg(v) {
                return Err(Error::InvalidConfig("dwell constant must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Computes the corpus mean needed by [`DwellMissing::Mean`]. A corpus
    /// without any known dwell time resolves to 0.
    pub fn resolve_mean<'a, I>(&mut self, pairs: I)
    where
        I: IntoIterator<Item = &'a AggregatedPair>,
    {
        self.corpus_mean_dwell = Some(mean_known_dwell(pairs).unwrap_or(0.0));
    }
}

/// Mean `dwell_total` over pairs with at least one known dwell time.
pub fn mean_known_dwell<'a, I>(pairs: I) -> Option<f64>
where
    I: IntoIterator<Item = &'a AggregatedPair>,
{
    let (sum, n) = pairs
        .into_iter()
        .filter(|p| p.dwell_known > 0)
        .fold((0u128, 0u64), |(s, n), p| (s + p.dwell_total as u128, n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}

pub fn clip01(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite(x));
    }
    Ok(clamp(x))
}

fn clamp(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

pub fn weighted_clicks(pair: &AggregatedPair, cfg: &LabelConfig) -> f64 {
    cfg.alpha * pair.nonlast_clicks as f64 + cfg.beta * pair.last_clicks as f64
}

pub fn click_label(pair: &AggregatedPair, cfg: &LabelConfig) -> f64 {
    clamp(cfg.scale * weighted_clicks(pair, cfg).ln_1p())
}

/// Total dwell time of the pair, or the policy substitute when unknown.
pub fn effective_dwell(pair: &AggregatedPair, cfg: &LabelConfig) -> Result<f64> {
    if pair.dwell_known > 0 {
        return Ok(pair.dwell_total as f64);
    }
    match cfg.dwell_missing {
        DwellMissing::Zero => Ok(0.0),
        DwellMissing::Constant(v) => Ok(v),
        DwellMissing::Mean => cfg.corpus_mean_dwell.ok_or(Error::PolicyUnresolved),
    }
}

pub fn dwell_label(pair: &AggregatedPair, cfg: &LabelConfig) -> Result<f64> {
    Ok(clamp(cfg.scale * effective_dwell(pair, cfg)?.ln_1p()))
}

/// `views / (rank_sum + C)`, unclipped.
pub fn rank_label(pair: &AggregatedPair, cfg: &LabelConfig) -> f64 {
    pair.views as f64 / (pair.rank_sum as f64 + cfg.rank_c)
}

/// Clicks plus the rank term, multiplied by the dwell total clipped from
/// below at 1, under the scaled logarithm. Unclicked pairs reduce to the rank
/// term, which then acts as a tie breaker.
pub fn click_dwell_rank_label(pair: &AggregatedPair, cfg: &LabelConfig) -> f64 {
    let dwell = (pair.dwell_total as f64).max(1.0);
    let mass = (weighted_clicks(pair, cfg) + rank_label(pair, cfg)) * dwell;
    clamp(cfg.scale * mass.ln_1p())
}

pub fn loss_weight(pair: &AggregatedPair, cfg: &LabelConfig) -> f64 {
    match cfg.weight_mode {
        WeightMode::None => 1.0,
        WeightMode::Views => (2.0 + pair.views as f64).ln(),
        WeightMode::Clicks => (2.0 + pair.clicks_total as f64).ln(),
    }
}

/// Label of `pair` under `formula`, always in [0, 1]. The rank label is
/// clipped here; it only reaches 1 when views exceed `rank_sum + C`.
pub fn label(pair: &AggregatedPair, formula: LabelFormula, cfg: &LabelConfig) -> Result<f64> {
    Ok(match formula {
        LabelFormula::Clicks => click_label(pair, cfg),
        LabelFormula::Dwell => dwell_label(pair, cfg)?,
        LabelFormula::Rank => clamp(rank_label(pair, cfg)),
        LabelFormula::ClickDwellRank => click_dwell_rank_label(pair, cfg),
    })
}

/// Labels every pair in parallel, keeping input order.
pub fn label_pairs(
    pairs: &[AggregatedPair],
    formula: LabelFormula,
    cfg: &LabelConfig,
) -> Result<Vec<LabeledRow>> {
    cfg.validate()?;
    pairs
        .par_iter()
        .map(|p| {
            Ok(LabeledRow {
                query: p.query.clone(),
                url: p.url.clone(),
                title: p.title.clone(),
                bte: p.bte.clone(),
                label: label(p, formula, cfg)?,
                weight: loss_weight(p, cfg),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(nonlast: u64, last: u64, views: u64, rank_sum: u64, dwell: Option<u64>) -> AggregatedPair {
        AggregatedPair {
            query: "q".into(),
            url: "u".into(),
            views,
            clicks_total: nonlast + last,
            nonlast_clicks: nonlast,
            last_clicks: last,
            dwell_total: dwell.unwrap_or(0),
            dwell_known: dwell.is_some() as u64,
            rank_sum,
            rank_known: views,
            ..Default::default()
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1e-300)
    }

    #[test]
    fn clip() {
        assert_eq!(clip01(-0.3).unwrap(), 0.0);
        assert_eq!(clip01(0.5).unwrap(), 0.5);
        assert_eq!(clip01(7.0).unwrap(), 1.0);
        assert!(matches!(clip01(f64::NAN), Err(Error::NonFinite(_))));
        assert!(clip01(f64::INFINITY).is_err());
    }

    #[test]
    fn weighted_click_sums() {
        let cfg = LabelConfig {
            alpha: 1.0,
            beta: 0.5,
            ..Default::default()
        };
        assert_eq!(weighted_clicks(&pair(3, 2, 5, 0, None), &cfg), 4.0);
        assert_eq!(weighted_clicks(&pair(0, 0, 5, 0, None), &cfg), 0.0);
        assert_eq!(weighted_clicks(&pair(1, 1, 2, 0, None), &LabelConfig::default()), 2.0);
    }

    #[test]
    fn click_labels() {
        let cfg = LabelConfig {
            alpha: 1.0,
            beta: 0.5,
            ..Default::default()
        };
        assert_eq!(click_label(&pair(0, 0, 1, 0, None), &cfg), 0.0);
        assert!(close(click_label(&pair(3, 2, 5, 0, None), &cfg), 0.080471895621705019));
    }

    #[test]
    fn click_label_saturates_at_clip_boundary() {
        // e^20 - 1 clicks is where s * ln(1 + w) reaches 1 with s = 1/20.
        let cfg = LabelConfig::default();
        let w = (20f64).exp_m1();
        let p = pair(w.round() as u64, 0, 1, 0, None);
        let l = click_label(&p, &cfg);
        assert!((l - 1.0).abs() < 1e-9);
        let above = pair(w.round() as u64 * 2, 0, 1, 0, None);
        assert_eq!(click_label(&above, &cfg), 1.0);
    }

    #[test]
    fn dwell_labels() {
        let cfg = LabelConfig::default();
        assert!(close(dwell_label(&pair(1, 0, 1, 0, Some(116)), &cfg).unwrap(), 0.23810869673988781));
        let unknown = pair(0, 0, 1, 0, None);
        let zero = LabelConfig {
            dwell_missing: DwellMissing::Zero,
            ..Default::default()
        };
        assert_eq!(dwell_label(&unknown, &zero).unwrap(), 0.0);
        assert!(close(dwell_label(&unknown, &cfg).unwrap(), 0.15222612188617115));

        let mut mean = LabelConfig {
            dwell_missing: DwellMissing::Mean,
            ..Default::default()
        };
        assert!(matches!(dwell_label(&unknown, &mean), Err(Error::PolicyUnresolved)));
        let corpus = [pair(1, 0, 1, 0, Some(10)), pair(1, 0, 1, 0, Some(30)), unknown.clone()];
        mean.resolve_mean(&corpus);
        assert_eq!(mean.corpus_mean_dwell, Some(20.0));
        assert!(close(dwell_label(&unknown, &mean).unwrap(), 0.15222612188617115));
    }

    #[test]
    fn rank_labels() {
        let cfg = LabelConfig::default();
        assert!(close(rank_label(&pair(0, 0, 5, 5, None), &cfg), 5.0 / 105.0));
        assert_eq!(rank_label(&pair(0, 0, 1, 0, None), &cfg), 0.01);
        assert!(rank_label(&pair(0, 0, 5, 6, None), &cfg) < rank_label(&pair(0, 0, 5, 5, None), &cfg));
        // clipped only when used as a training label
        let many = pair(0, 0, 300, 0, None);
        assert_eq!(rank_label(&many, &cfg), 3.0);
        assert_eq!(label(&many, LabelFormula::Rank, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn click_dwell_rank_labels() {
        let cfg = LabelConfig::default();
        let unclicked = pair(0, 0, 1, 1, None);
        assert!(close(click_dwell_rank_label(&unclicked, &cfg), 0.00049261482215058151));
        let clicked = pair(0, 1, 1, 0, Some(116));
        assert!(close(click_dwell_rank_label(&clicked, &cfg), 0.23860198191115622));
        let high = pair(2, 1, 5, 1, Some(60));
        let low = pair(2, 1, 5, 5, Some(60));
        assert!(click_dwell_rank_label(&high, &cfg) > click_dwell_rank_label(&low, &cfg));
    }

    #[test]
    fn loss_weights() {
        let p = pair(0, 0, 1, 0, None);
        let with = |m| LabelConfig {
            weight_mode: m,
            ..Default::default()
        };
        assert!(close(loss_weight(&p, &with(WeightMode::Views)), 1.0986122886681098));
        assert!(close(loss_weight(&p, &with(WeightMode::Clicks)), std::f64::consts::LN_2));
        assert_eq!(loss_weight(&p, &with(WeightMode::None)), 1.0);
    }

    #[test]
    fn parses_cli_spellings() {
        assert_eq!("const:20".parse::<DwellMissing>().unwrap(), DwellMissing::Constant(20.0));
        assert!("const:-1".parse::<DwellMissing>().is_err());
        assert_eq!("mean".parse::<DwellMissing>().unwrap(), DwellMissing::Mean);
        assert_eq!("cdr".parse::<LabelFormula>().unwrap(), LabelFormula::ClickDwellRank);
        assert_eq!("views".parse::<WeightMode>().unwrap(), WeightMode::Views);
    }

    #[test]
    fn invalid_configs() {
        let bad = LabelConfig {
            scale: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = LabelConfig {
            rank_c: -1.0,
            ..Default::default()
        };
        assert!(label_pairs(&[], LabelFormula::Rank, &bad).is_err());
    }
}
