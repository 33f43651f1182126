//! Generation confidence and grounding utility.
//!
//! Grounding utility is the change in a model's confidence about its own
//! greedy answer when the answer is produced with a grounding context versus
//! without one. Confidence is the negated mean entropy (or perplexity) of the
//! generated tokens, optionally restricted to *key tokens*: positions whose
//! entropy moves by more than `alpha` nats when the context is removed.

mod confidence;
mod distribution;
mod keytokens;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use confidence::{confidence, grogu, mean_nll, perplexity, ungrounded_confidence, Confidence};
pub use distribution::{
    entropy_bounds, token_entropy, EntropyBounds, TokenDistribution, MASS_TOLERANCE, MIN_PROBABILITY,
};
pub use keytokens::{fallback_count, select_key_tokens, select_key_tokens_ungrounded, KeySelection};

/// Per-position score of a generated token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token_id: u32,
    /// Natural-log probability of the token that was generated or forced.
    pub chosen_logprob: f64,
    /// Point estimate used by the metric: exact, or the midpoint of the bounds.
    pub entropy_nats: f64,
    pub entropy_lower: f64,
    pub entropy_upper: f64,
}

impl TokenScore {
    pub fn from_distribution(token_id: u32, chosen_logprob: f64, dist: &TokenDistribution) -> Result<Self> {
        if chosen_logprob > 0.0 || chosen_logprob.is_nan() {
            return Err(Error::InconsistentDistribution(format!(
                "chosen log-probability {chosen_logprob} is not a log-probability"
            )));
        }
        let b = entropy_bounds(dist)?;
        Ok(Self {
            token_id,
            chosen_logprob,
            entropy_nats: if b.is_exact() { b.lower } else { b.midpoint() },
            entropy_lower: b.lower,
            entropy_upper: b.upper,
        })
    }

    /// A score with a known exact entropy; handy for hand-built traces.
    pub fn exact(token_id: u32, chosen_logprob: f64, entropy: f64) -> Self {
        Self {
            token_id,
            chosen_logprob,
            entropy_nats: entropy,
            entropy_lower: entropy,
            entropy_upper: entropy,
        }
    }
}

/// Which conditioning a score list was produced under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Grounded,
    Ungrounded,
}

/// A greedy generation with its teacher-forced scores under both conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub tokens: Vec<String>,
    pub grounded: Vec<TokenScore>,
    pub ungrounded: Option<Vec<TokenScore>>,
    pub model_id: String,
}

impl GenerationTrace {
    pub fn new(
        tokens: Vec<String>,
        grounded: Vec<TokenScore>,
        ungrounded: Option<Vec<TokenScore>>,
        model_id: impl Into<String>,
    ) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Structural("generation trace has no tokens".into()));
        }
        if grounded.len() != tokens.len() {
            return Err(Error::LengthMismatch(format!(
                "{} tokens but {} grounded scores",
                tokens.len(),
                grounded.len()
            )));
        }
        if let Some(u) = &ungrounded {
            if u.len() != grounded.len() {
                return Err(Error::LengthMismatch(format!(
                    "{} grounded scores but {} ungrounded scores",
                    grounded.len(),
                    u.len()
                )));
            }
        }
        Ok(Self {
            tokens,
            grounded,
            ungrounded,
            model_id: model_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn scores(&self, condition: Condition) -> Result<&[TokenScore]> {
        match condition {
            Condition::Grounded => Ok(&self.grounded),
            Condition::Ungrounded => self
                .ungrounded
                .as_deref()
                .ok_or_else(|| Error::MissingUngrounded("ungrounded condition".into())),
        }
    }

    pub fn grounded_entropies(&self) -> Vec<f64> {
        self.grounded.iter().map(|s| s.entropy_nats).collect()
    }
}

/// Key-token threshold `alpha` (nats) and fallback fraction `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyTokenConfig {
    pub alpha: f64,
    pub top_k_frac: f64,
}

impl Default for KeyTokenConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            top_k_frac: 0.1,
        }
    }
}

impl KeyTokenConfig {
    pub fn new(alpha: f64, top_k_frac: f64) -> Result<Self> {
        let cfg = Self { alpha, top_k_frac };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.top_k_frac > 0.0 && self.top_k_frac <= 1.0) {
            return Err(Error::Config(format!(
                "top-k fraction must be in (0, 1], got {}",
                self.top_k_frac
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceFormulation {
    Ppl,
    KeyPpl,
    Entropy,
    #[default]
    KeyEntropy,
}

impl ConfidenceFormulation {
    pub const ALL: [ConfidenceFormulation; 4] = [
        ConfidenceFormulation::Ppl,
        ConfidenceFormulation::KeyPpl,
        ConfidenceFormulation::Entropy,
        ConfidenceFormulation::KeyEntropy,
    ];

    pub fn uses_key_tokens(self) -> bool {
        matches!(self, Self::KeyPpl | Self::KeyEntropy)
    }

    pub fn is_entropy_based(self) -> bool {
        matches!(self, Self::Entropy | Self::KeyEntropy)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ppl => "ppl",
            Self::KeyPpl => "keyppl",
            Self::Entropy => "entropy",
            Self::KeyEntropy => "keyentropy",
        }
    }
}

impl fmt::Display for ConfidenceFormulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConfidenceFormulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ppl" => Ok(Self::Ppl),
            "keyppl" => Ok(Self::KeyPpl),
            "entropy" => Ok(Self::Entropy),
            "keyentropy" => Ok(Self::KeyEntropy),
            other => Err(Error::Config(format!("unknown formulation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMode {
    /// Grounded confidence minus ungrounded confidence.
    Full,
    /// Grounded confidence only. The ungrounded term is shared by every
    /// context for a given question, so it cancels in comparisons.
    #[default]
    GroundedOnly,
}

impl FromStr for UtilityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "grounded_only" | "grounded-only" => Ok(Self::GroundedOnly),
            other => Err(Error::Config(format!("unknown utility mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityScore {
    pub value: f64,
    pub formulation: ConfidenceFormulation,
    pub grounded_confidence: f64,
    pub ungrounded_confidence: Option<f64>,
    pub mode: UtilityMode,
    pub key_token_indices: Vec<usize>,
    /// Interval on the grounded confidence implied by per-token entropy bounds.
    pub grounded_bounds: Option<(f64, f64)>,
}
