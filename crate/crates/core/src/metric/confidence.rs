use serde::{Deserialize, Serialize};

use super::distribution::neumaier_sum;
use super::{
    select_key_tokens, select_key_tokens_ungrounded, Condition, ConfidenceFormulation, GenerationTrace, KeyTokenConfig,
    TokenScore, UtilityMode, UtilityScore,
};
use crate::error::{Error, Result};

/// Confidence `gamma` of one generation under one formulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub value: f64,
    pub formulation: ConfidenceFormulation,
    pub indices: Vec<usize>,
    pub bounds: Option<(f64, f64)>,
}

/// Mean negative log-likelihood over `indices` (every position when `None`).
pub fn mean_nll(trace: &GenerationTrace, condition: Condition, indices: Option<&[usize]>) -> Result<f64> {
    let scores = trace.scores(condition)?;
    mean_over(scores, indices, |s| -s.chosen_logprob)
}

pub fn perplexity(trace: &GenerationTrace, condition: Condition, indices: Option<&[usize]>) -> Result<f64> {
    mean_nll(trace, condition, indices).map(f64::exp)
}

fn mean_over(scores: &[TokenScore], indices: Option<&[usize]>, f: impl Fn(&TokenScore) -> f64) -> Result<f64> {
    let values: Vec<f64> = match indices {
        None => scores.iter().map(&f).collect(),
        Some(idx) => idx
            .iter()
            .map(|&i| {
                scores
                    .get(i)
                    .map(&f)
                    .ok_or_else(|| Error::Structural(format!("index {i} out of range {}", scores.len())))
            })
            .collect::<Result<_>>()?,
    };
    if values.is_empty() {
        return Err(Error::EmptySelection("no tokens selected for averaging".into()));
    }
    Ok(neumaier_sum(values.iter().copied()) / values.len() as f64)
}

fn from_scores(scores: &[TokenScore], formulation: ConfidenceFormulation, indices: Vec<usize>) -> Result<Confidence> {
    let idx = Some(indices.as_slice());
    let (value, bounds) = if formulation.is_entropy_based() {
        let mean = mean_over(scores, idx, |s| s.entropy_nats)?;
        let lo = mean_over(scores, idx, |s| s.entropy_lower)?;
        let hi = mean_over(scores, idx, |s| s.entropy_upper)?;
        (-mean, Some((-hi, -lo)))
    } else {
        (-mean_over(scores, idx, |s| -s.chosen_logprob)?.exp(), None)
    };
    Ok(Confidence {
        value,
        formulation,
        indices,
        bounds,
    })
}

/// Confidence of a grounded generation.
///
/// `Entropy`/`Ppl` average over all tokens. `KeyEntropy`/`KeyPpl` average over
/// key tokens, which are always chosen by the entropy-difference rule and so
/// need the ungrounded teacher-forced scores.
pub fn confidence(
    trace: &GenerationTrace,
    formulation: ConfidenceFormulation,
    cfg: &KeyTokenConfig,
) -> Result<Confidence> {
    let indices = if formulation.uses_key_tokens() {
        if trace.ungrounded.is_none() {
            return Err(Error::MissingUngrounded(formulation.to_string()));
        }
        select_key_tokens(trace, cfg)?.indices
    } else {
        (0..trace.len()).collect()
    };
    from_scores(&trace.grounded, formulation, indices)
}

/// Confidence of an ungrounded generation, scored under the question alone.
/// Key variants keep positions whose own entropy exceeds `alpha`.
pub fn ungrounded_confidence(
    scores: &[TokenScore],
    formulation: ConfidenceFormulation,
    cfg: &KeyTokenConfig,
) -> Result<Confidence> {
    let indices = if formulation.uses_key_tokens() {
        select_key_tokens_ungrounded(scores, cfg)?.indices
    } else {
        (0..scores.len()).collect()
    };
    from_scores(scores, formulation, indices)
}

/// Grounding utility: grounded confidence minus ungrounded confidence, or
/// the grounded confidence alone in [`UtilityMode::GroundedOnly`].
pub fn grogu(grounded: Confidence, ungrounded: Option<Confidence>, mode: UtilityMode) -> Result<UtilityScore> {
    let (value, ungrounded_confidence) = match mode {
        UtilityMode::Full => {
            let u = ungrounded.ok_or_else(|| Error::MissingUngrounded("full-mode utility".into()))?;
            if u.formulation != grounded.formulation {
                return Err(Error::Config(format!(
                    "formulation mismatch: grounded {} vs ungrounded {}",
                    grounded.formulation, u.formulation
                )));
            }
            (grounded.value - u.value, Some(u.value))
        }
        UtilityMode::GroundedOnly => (grounded.value, None),
    };
    Ok(UtilityScore {
        value,
        formulation: grounded.formulation,
        grounded_confidence: grounded.value,
        ungrounded_confidence,
        mode,
        key_token_indices: grounded.indices,
        grounded_bounds: grounded.bounds,
    })
}
