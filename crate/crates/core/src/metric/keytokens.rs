use serde::{Deserialize, Serialize};

use super::{GenerationTrace, KeyTokenConfig, TokenScore};
use crate::error::{Error, Result};

/// Indices chosen as key tokens, ascending, and whether the fallback fired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySelection {
    pub indices: Vec<usize>,
    pub fallback: bool,
}

/// Number of positions the top-K fallback keeps: `max(1, ceil(K * n))`, at most `n`.
pub fn fallback_count(n: usize, top_k_frac: f64) -> usize {
    // The epsilon keeps products such as 0.1 * 30 = 3.0000000000000004 from
    // rounding up an extra token.
    let raw = (top_k_frac * n as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// Key tokens of a grounded generation: positions whose grounded and
/// ungrounded entropies differ by strictly more than `alpha`. When none
/// qualify, the highest-entropy grounded positions are used instead.
pub fn select_key_tokens(trace: &GenerationTrace, cfg: &KeyTokenConfig) -> Result<KeySelection> {
    let ungrounded = trace
        .ungrounded
        .as_deref()
        .ok_or_else(|| Error::MissingUngrounded("key-token selection".into()))?;
    if ungrounded.len() != trace.grounded.len() {
        return Err(Error::LengthMismatch(format!(
            "{} grounded vs {} ungrounded scores",
            trace.grounded.len(),
            ungrounded.len()
        )));
    }
    let entropies: Vec<f64> = trace.grounded.iter().map(|s| s.entropy_nats).collect();
    let indices: Vec<usize> = trace
        .grounded
        .iter()
        .zip(ungrounded)
        .enumerate()
        .filter(|(_, (g, u))| (g.entropy_nats - u.entropy_nats).abs() > cfg.alpha)
        .map(|(i, _)| i)
        .collect();
    Ok(with_fallback(indices, &entropies, cfg))
}

/// Key tokens of an ungrounded generation, where there is no second
/// condition to compare against: positions with entropy above `alpha`,
/// with the same top-K fallback.
pub fn select_key_tokens_ungrounded(scores: &[TokenScore], cfg: &KeyTokenConfig) -> Result<KeySelection> {
    if scores.is_empty() {
        return Err(Error::EmptySelection("ungrounded generation has no tokens".into()));
    }
    let entropies: Vec<f64> = scores.iter().map(|s| s.entropy_nats).collect();
    let indices = entropies
        .iter()
        .enumerate()
        .filter(|(_, h)| **h > cfg.alpha)
        .map(|(i, _)| i)
        .collect();
    Ok(with_fallback(indices, &entropies, cfg))
}

fn with_fallback(indices: Vec<usize>, entropies: &[f64], cfg: &KeyTokenConfig) -> KeySelection {
    if !indices.is_empty() || entropies.is_empty() {
        return KeySelection {
            indices,
            fallback: false,
        };
    }
    let m = fallback_count(entropies.len(), cfg.top_k_frac);
    let mut order: Vec<usize> = (0..entropies.len()).collect();
    order.sort_by(|&a, &b| entropies[b].total_cmp(&entropies[a]).then(a.cmp(&b)));
    order.truncate(m);
    order.sort_unstable();
    KeySelection {
        indices: order,
        fallback: true,
    }
}
