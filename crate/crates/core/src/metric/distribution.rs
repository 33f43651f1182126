//! Next-token distributions and their entropy.
//!
//! Inference servers usually expose only the top-k log-probabilities at each
//! position. A [`TokenDistribution`] therefore carries the observed head plus
//! the probability mass left over for the unobserved tail. With no residual
//! the entropy is exact; otherwise [`entropy_bounds`] gives the tightest
//! interval that holds for every allocation of the tail.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on total probability mass.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Probabilities below this are treated as zero and dropped on construction.
pub const MIN_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    entries: Vec<(u32, f64)>,
    residual_mass: f64,
    vocab_size: usize,
}

impl TokenDistribution {
    pub fn new(entries: Vec<(u32, f64)>, residual_mass: f64, vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InconsistentDistribution("vocabulary size is zero".into()));
        }
        if !(0.0..1.0).contains(&residual_mass) {
            return Err(Error::InconsistentDistribution(format!(
                "residual mass {residual_mass} outside [0, 1)"
            )));
        }
        let mut kept = Vec::with_capacity(entries.len());
        for (id, p) in entries {
            if !p.is_finite() || !(0.0..=1.0 + MASS_TOLERANCE).contains(&p) {
                return Err(Error::InconsistentDistribution(format!(
                    "token {id} has probability {p}"
                )));
            }
            if p >= MIN_PROBABILITY {
                kept.push((id, p));
            }
        }
        if kept.len() > vocab_size {
            return Err(Error::InconsistentDistribution(format!(
                "{} entries exceed vocabulary size {vocab_size}",
                kept.len()
            )));
        }
        let mut ids: Vec<u32> = kept.iter().map(|(id, _)| *id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InconsistentDistribution("duplicate token id".into()));
        }
        let total = neumaier_sum(kept.iter().map(|(_, p)| *p)) + residual_mass;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::NotNormalized {
                total,
                deficit: 1.0 - total,
            });
        }
        Ok(Self {
            entries: kept,
            residual_mass,
            vocab_size,
        })
    }

    /// A full distribution over `probs.len()` tokens, token ids being positions.
    pub fn full(probs: &[f64]) -> Result<Self> {
        let entries = probs.iter().enumerate().map(|(i, &p)| (i as u32, p)).collect();
        Self::new(entries, 0.0, probs.len())
    }

    /// Builds a distribution from (token, natural-log probability) pairs.
    ///
    /// The residual is whatever mass the pairs leave uncovered. A residual
    /// within [`MASS_TOLERANCE`] of zero is snapped to zero when the pairs
    /// cover the whole vocabulary, or when it is below [`MIN_PROBABILITY`].
    pub fn from_logprobs(entries: &[(u32, f64)], vocab_size: usize) -> Result<Self> {
        let probs: Vec<(u32, f64)> = entries.iter().map(|&(id, lp)| (id, lp.exp())).collect();
        let covered = neumaier_sum(probs.iter().map(|(_, p)| *p));
        let mut residual = (1.0 - covered).max(0.0);
        if residual < MIN_PROBABILITY || (probs.len() >= vocab_size && residual <= MASS_TOLERANCE) {
            residual = 0.0;
        }
        Self::new(probs, residual, vocab_size)
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn residual_mass(&self) -> f64 {
        self.residual_mass
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn is_full(&self) -> bool {
        self.residual_mass == 0.0
    }

    pub fn probability_of(&self, token: u32) -> Option<f64> {
        self.entries.iter().find(|(id, _)| *id == token).map(|(_, p)| *p)
    }

    /// Keeps the `k` most probable entries and moves the rest into the residual.
    pub fn truncate_top_k(&self, k: usize) -> Result<Self> {
        let mut sorted = self.entries.clone();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let dropped = sorted.len() > k;
        sorted.truncate(k);
        let head = neumaier_sum(sorted.iter().map(|(_, p)| *p));
        let residual = if dropped || self.residual_mass > 0.0 {
            (1.0 - head).max(0.0)
        } else {
            0.0
        };
        Self::new(sorted, residual, self.vocab_size)
    }

    fn head_entropy(&self) -> f64 {
        neumaier_sum(self.entries.iter().map(|(_, p)| plogp(*p)))
    }
}

/// Lower and upper bounds on the entropy of a possibly truncated distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyBounds {
    pub lower: f64,
    pub upper: f64,
}

impl EntropyBounds {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn is_exact(&self) -> bool {
        self.lower == self.upper
    }
}

/// Shannon entropy in nats of a full distribution.
pub fn token_entropy(dist: &TokenDistribution) -> Result<f64> {
    if !dist.is_full() {
        return Err(Error::TruncatedDistribution(dist.residual_mass));
    }
    Ok(dist.head_entropy())
}

/// Entropy interval for a distribution whose tail is unobserved.
///
/// The lower bound puts the whole residual on a single token; the upper bound
/// spreads it uniformly over the `V - k` unseen tokens.
pub fn entropy_bounds(dist: &TokenDistribution) -> Result<EntropyBounds> {
    if dist.entries.is_empty() {
        return Err(Error::InconsistentDistribution("no observed entries".into()));
    }
    let head = dist.head_entropy();
    let r = dist.residual_mass;
    if r == 0.0 {
        return Ok(EntropyBounds {
            lower: head,
            upper: head,
        });
    }
    let unseen = dist.vocab_size - dist.entries.len();
    if unseen == 0 {
        return Err(Error::InconsistentDistribution(format!(
            "residual mass {r:.3e} but entries cover the whole vocabulary"
        )));
    }
    Ok(EntropyBounds {
        lower: head + plogp(r),
        upper: head - r * (r / unseen as f64).ln(),
    })
}

/// `-p ln p` with the convention `0 ln 0 = 0`.
#[inline]
pub(crate) fn plogp(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.ln()
    }
}

pub(crate) fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
