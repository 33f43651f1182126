use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTestResult {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_two_sided: f64,
}

/// Exact two-sided sign test; ties are carried along but never enter the
/// binomial. `wins + losses == 0` yields p = 1.
pub fn sign_test(wins: usize, losses: usize, ties: usize) -> SignTestResult {
    SignTestResult {
        wins,
        losses,
        ties,
        p_two_sided: binomial_two_sided(wins, losses),
    }
}

fn binomial_two_sided(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let m = wins.min(losses);
    let tail = if n <= 120 {
        // C(n, i) fits in u128 for n <= 120 (C(120, 60) < 2^117)
        let mut c: u128 = 1;
        let mut sum: u128 = 1;
        for i in 1..=m {
            c = c * (n - i + 1) as u128 / i as u128;
            sum += c;
        }
        sum as f64 * 0.5f64.powi(n as i32)
    } else {
        let ln_fact: Vec<f64> = std::iter::once(0.0)
            .chain((1..=n).scan(0.0, |acc, k| {
                *acc += (k as f64).ln();
                Some(*acc)
            }))
            .collect();
        let ln2n = n as f64 * std::f64::consts::LN_2;
        let terms: Vec<f64> = (0..=m)
            .map(|i| ln_fact[n] - ln_fact[i] - ln_fact[n - i] - ln2n)
            .collect();
        let hi = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi.exp() * terms.iter().map(|t| (t - hi).exp()).sum::<f64>()
    };
    (2.0 * tail).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// An exact utility tie counts against the metric.
    #[default]
    Discordant,
    /// An exact tie counts half concordant, half discordant.
    Split,
}

impl std::str::FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discordant" => Ok(Self::Discordant),
            "split" => Ok(Self::Split),
            other => Err(Error::Config(format!("unknown tie policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceResult {
    pub concordant: f64,
    pub discordant: f64,
    pub ties: usize,
    pub tau: f64,
}

/// Kendall-style τ = (C − D) / (C + D) over (correct, incorrect) pairs.
///
/// `diffs` holds, per case, utility(correct context) − utility(incorrect).
pub fn concordance_from_diffs(diffs: &[f64], ties: TiePolicy) -> Result<ConcordanceResult> {
    let (mut c, mut d, mut t) = (0.0, 0.0, 0usize);
    for &x in diffs {
        if x > 0.0 {
            c += 1.0;
        } else if x < 0.0 {
            d += 1.0;
        } else {
            t += 1;
            match ties {
                TiePolicy::Discordant => d += 1.0,
                TiePolicy::Split => {
                    c += 0.5;
                    d += 0.5;
                }
            }
        }
    }
    tau(c, d).map(|tau| ConcordanceResult {
        concordant: c,
        discordant: d,
        ties: t,
        tau,
    })
}

pub fn tau(concordant: f64, discordant: f64) -> Result<f64> {
    let total = concordant + discordant;
    if total <= 0.0 {
        return Err(Error::Undefined(
            "tau needs at least one concordant or discordant pair".into(),
        ));
    }
    Ok((concordant - discordant) / total)
}

/// Binary classifier counts for the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut m = Self::default();
        for (predicted, actual) in pairs {
            match (predicted, actual) {
                (true, true) => m.tp += 1,
                (true, false) => m.fp += 1,
                (false, true) => m.fn_ += 1,
                (false, false) => m.tn += 1,
            }
        }
        m
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| (self.tp + self.tn) as f64 / n as f64)
    }

    /// F1 of the positive class; `None` when every prediction is the same
    /// class, where F1 says nothing about the classifier.
    pub fn f1(&self) -> Option<f64> {
        if self.single_class_predictions() {
            return None;
        }
        f1_counts(self.tp, self.fp, self.fn_)
    }

    /// Mean of the F1 of both classes; `None` under the same condition as [`f1`](Self::f1).
    pub fn macro_f1(&self) -> Option<f64> {
        if self.single_class_predictions() {
            return None;
        }
        Some((f1_counts(self.tp, self.fp, self.fn_)? + f1_counts(self.tn, self.fn_, self.fp)?) / 2.0)
    }

    fn single_class_predictions(&self) -> bool {
        self.tp + self.fp == 0 || self.tn + self.fn_ == 0
    }
}

fn f1_counts(tp: usize, fp: usize, fn_: usize) -> Option<f64> {
    let denom = 2 * tp + fp + fn_;
    (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
}
