//! Independent label oracle in 60-digit decimal fixed point.
//!
//! Every `f64` input is converted exactly (up to the 10^-60 grid), the
//! formulas are evaluated with big integers and only the final value is
//! rounded back to `f64`. Logarithms use `ln x = k ln 2 + 2 atanh((m-1)/(m+1))`
//! with `x = m 2^k`, `m ∈ [1, 2)`.

#![allow(dead_code)]

use std::sync::OnceLock;

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};

use clicklabel::aggregation::AggregatedPair;
use clicklabel::seed::mix64;
use clicklabel::labeling::{DwellMissing, LabelConfig, LabelFormula, WeightMode};

const DIGITS: u32 = 60;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Fixed(BigInt);

fn unit() -> BigInt {
    BigInt::from(10u8).pow(DIGITS)
}

impl Fixed {
    pub fn int(n: u64) -> Fixed {
        Fixed(BigInt::from(n) * unit())
    }

    /// Exact value of a finite `f64`, truncated to the grid.
    pub fn from_f64(x: f64) -> Fixed {
        assert!(x.is_finite());
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mantissa, e) = if exp == 0 { (frac, -1074) } else { (frac | (1 << 52), exp - 1075) };
        let mut v = BigInt::from(mantissa) * unit();
        if e >= 0 {
            v <<= e as usize;
        } else {
            v >>= (-e) as usize;
        }
        Fixed(if negative { -v } else { v })
    }

    /// Within a few ulps: both operands are rounded once before dividing.
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap() / unit().to_f64().unwrap()
    }

    pub fn add(&self, o: &Fixed) -> Fixed {
        Fixed(&self.0 + &o.0)
    }

    pub fn sub(&self, o: &Fixed) -> Fixed {
        Fixed(&self.0 - &o.0)
    }

    pub fn mul(&self, o: &Fixed) -> Fixed {
        Fixed(&self.0 * &o.0 / unit())
    }

    pub fn div(&self, o: &Fixed) -> Fixed {
        Fixed(&self.0 * unit() / &o.0)
    }

    pub fn max(self, o: Fixed) -> Fixed {
        if self >= o {
            self
        } else {
            o
        }
    }

    pub fn clamp01(self) -> Fixed {
        if self.0.is_negative() {
            Fixed(BigInt::zero())
        } else if self.0 > unit() {
            Fixed(unit())
        } else {
            self
        }
    }
}

/// `2 atanh(z)` for `0 <= z < 1/2`.
fn two_atanh(z: &Fixed) -> Fixed {
    let z2 = z.mul(z);
    let mut power = z.clone();
    let mut sum = Fixed(BigInt::zero());
    let mut k = 1u64;
    while !power.0.is_zero() {
        sum = sum.add(&Fixed(&power.0 / BigInt::from(k)));
        power = power.mul(&z2);
        k += 2;
    }
    Fixed(sum.0 * 2)
}

fn ln2() -> &'static Fixed {
    static LN2: OnceLock<Fixed> = OnceLock::new();
    LN2.get_or_init(|| two_atanh(&Fixed::int(1).div(&Fixed::int(3))))
}

/// Natural logarithm of `x >= 1`.
pub fn ln(x: &Fixed) -> Fixed {
    assert!(x.0 >= unit(), "oracle ln only needs arguments >= 1");
    let two = Fixed::int(2);
    let mut m = x.clone();
    let mut k = 0u64;
    while m >= two {
        m = Fixed(m.0 >> 1usize);
        k += 1;
    }
    let one = Fixed::int(1);
    let z = m.sub(&one).div(&m.add(&one));
    two_atanh(&z).add(&Fixed(&ln2().0 * BigInt::from(k)))
}

pub fn ln_1p(x: &Fixed) -> Fixed {
    ln(&x.add(&Fixed::int(1)))
}

fn weighted_clicks(p: &AggregatedPair, cfg: &LabelConfig) -> Fixed {
    Fixed::from_f64(cfg.alpha)
        .mul(&Fixed::int(p.nonlast_clicks))
        .add(&Fixed::from_f64(cfg.beta).mul(&Fixed::int(p.last_clicks)))
}

fn rank_term(p: &AggregatedPair, cfg: &LabelConfig) -> Fixed {
    Fixed::int(p.views).div(&Fixed::int(p.rank_sum).add(&Fixed::from_f64(cfg.rank_c)))
}

/// `views / (rank_sum + C)` before clipping.
pub fn rank_ratio(p: &AggregatedPair, cfg: &LabelConfig) -> f64 {
    rank_term(p, cfg).to_f64()
}

fn log_label(mass: &Fixed, cfg: &LabelConfig) -> Fixed {
    Fixed::from_f64(cfg.scale).mul(&ln_1p(mass)).clamp01()
}

pub fn label(p: &AggregatedPair, formula: LabelFormula, cfg: &LabelConfig) -> f64 {
    let v = match formula {
        LabelFormula::Clicks => log_label(&weighted_clicks(p, cfg), cfg),
        LabelFormula::Dwell => {
            let dwell = if p.dwell_known > 0 {
                Fixed::int(p.dwell_total)
            } else {
                match cfg.dwell_missing {
                    DwellMissing::Zero => Fixed::int(0),
                    DwellMissing::Constant(c) => Fixed::from_f64(c),
                    DwellMissing::Mean => Fixed::from_f64(cfg.corpus_mean_dwell.unwrap()),
                }
            };
            log_label(&dwell, cfg)
        }
        LabelFormula::Rank => rank_term(p, cfg).clamp01(),
        LabelFormula::ClickDwellRank => {
            let dwell = Fixed::int(p.dwell_total).max(Fixed::int(1));
            log_label(&weighted_clicks(p, cfg).add(&rank_term(p, cfg)).mul(&dwell), cfg)
        }
    };
    v.to_f64()
}

pub fn loss_weight(p: &AggregatedPair, cfg: &LabelConfig) -> f64 {
    let n = match cfg.weight_mode {
        WeightMode::None => return 1.0,
        WeightMode::Views => p.views,
        WeightMode::Clicks => p.clicks_total,
    };
    ln(&Fixed::int(n + 2)).to_f64()
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(got: f64, want: f64) -> f64 {
    let diff = (got - want).abs();
    if want.abs() < 1e-300 {
        diff
    } else {
        diff / want.abs()
    }
}

/// Deterministic pseudo-random pair number `i`, covering zero counts, single
/// events and counts far beyond anything a label saturates at.
pub fn fuzz_pair(i: u64) -> AggregatedPair {
    let mut state = i.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x5eed;
    let mut next = |max: u64| {
        if max == 0 {
            return 0;
        }
        state = mix64(state);
        // Spread magnitudes over decades rather than uniformly.
        let decade = (state >> 59) % (max.ilog10() as u64 + 2);
        state = mix64(state);
        state % (10u64.pow(decade as u32).min(max) + 1)
    };
    let views = next(1_000_000).max(1);
    let nonlast = next(50_000);
    let last = next(views);
    let dwell_known = next(views);
    let dwell_total = if dwell_known == 0 { 0 } else { next(10_000_000) };
    let rank_known = next(views);
    let rank_sum = next(rank_known.saturating_mul(200));
    AggregatedPair {
        query: format!("q{i}"),
        url: format!("https://example.cz/{i}"),
        views,
        clicks_total: nonlast + last,
        nonlast_clicks: nonlast,
        last_clicks: last,
        dwell_total,
        dwell_known,
        rank_sum,
        rank_known,
        ..AggregatedPair::default()
    }
}
