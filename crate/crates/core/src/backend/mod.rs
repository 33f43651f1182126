//! Language-model backends.
//!
//! Every backend does two things: greedy generation, and teacher-forced
//! scoring of a fixed continuation. Both return raw per-position
//! log-probabilities ([`PositionScore`]); the conversion to
//! [`TokenScore`](crate::metric::TokenScore) happens in one place so that a
//! live backend and a replayed trace produce bit-identical metric inputs.

mod http;
mod needle;
mod prompt;
mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{TokenDistribution, TokenScore};

pub use http::{HttpBackend, HttpConfig, ENV_API_KEY, ENV_ENDPOINT, ENV_TOP_LOGPROBS};
pub use needle::{default_vocabulary, NeedleLm, NeedleLmParams, EOS_TOKEN};
pub use prompt::{assemble_prompt, GroundingContext, Prompt, PromptSpec};
pub use trace::{trace_key, TraceRecorder, TraceReplay, TraceRow, TraceRowScore, TraceStore};

/// Tokens that end a generation and are dropped when detokenizing.
pub const STOP_TOKENS: &[&str] = &["</s>", "<|endoftext|>", "<|im_end|>", "<eos>"];

/// Raw scoring output for one position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionScore {
    pub token: String,
    pub logprob: f64,
    /// Observed (token, log-probability) pairs; the full vocabulary when exact.
    pub top: Vec<(String, f64)>,
    /// Probability mass not covered by `top`.
    pub residual: f64,
    pub vocab_size: usize,
}

impl PositionScore {
    pub fn to_distribution(&self) -> Result<TokenDistribution> {
        let entries = self
            .top
            .iter()
            .enumerate()
            .map(|(i, (_, lp))| (i as u32, lp.exp()))
            .collect();
        TokenDistribution::new(entries, self.residual, self.vocab_size)
    }

    pub fn to_token_score(&self) -> Result<TokenScore> {
        let id = self
            .top
            .iter()
            .position(|(t, _)| *t == self.token)
            .map_or(u32::MAX, |i| i as u32);
        TokenScore::from_distribution(id, self.logprob, &self.to_distribution()?)
    }
}

pub fn to_token_scores(positions: &[PositionScore]) -> Result<Vec<TokenScore>> {
    positions.iter().map(PositionScore::to_token_score).collect()
}

/// A greedy generation together with the scores observed while generating.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<String>,
    pub scores: Vec<PositionScore>,
}

pub trait LanguageModel: Send + Sync {
    fn model_id(&self) -> &str;

    fn greedy_generate(&self, prompt: &Prompt, max_new_tokens: usize) -> Result<Generation>;

    /// Per-position scores of `forced` under `prompt`, aligned 1:1 with `forced`.
    fn force_score(&self, prompt: &Prompt, forced: &[String]) -> Result<Vec<PositionScore>>;

    fn detokenize(&self, tokens: &[String]) -> String {
        detokenize(tokens)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<M> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn greedy_generate(&self, prompt: &Prompt, max_new_tokens: usize) -> Result<Generation> {
        (**self).greedy_generate(prompt, max_new_tokens)
    }
    fn force_score(&self, prompt: &Prompt, forced: &[String]) -> Result<Vec<PositionScore>> {
        (**self).force_score(prompt, forced)
    }
    fn detokenize(&self, tokens: &[String]) -> String {
        (**self).detokenize(tokens)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for Box<M> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn greedy_generate(&self, prompt: &Prompt, max_new_tokens: usize) -> Result<Generation> {
        (**self).greedy_generate(prompt, max_new_tokens)
    }
    fn force_score(&self, prompt: &Prompt, forced: &[String]) -> Result<Vec<PositionScore>> {
        (**self).force_score(prompt, forced)
    }
    fn detokenize(&self, tokens: &[String]) -> String {
        (**self).detokenize(tokens)
    }
}

/// Concatenates tokens, dropping stop markers. Tokens carry their own spacing.
pub fn detokenize(tokens: &[String]) -> String {
    tokens
        .iter()
        .filter(|t| !STOP_TOKENS.contains(&t.as_str()))
        .map(String::as_str)
        .collect::<String>()
        .trim()
        .to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Trace,
    Http,
    Needle,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trace" => Ok(Self::Trace),
            "http" => Ok(Self::Http),
            "needle" => Ok(Self::Needle),
            other => Err(Error::Config(format!("unknown backend `{other}`"))),
        }
    }
}

/// Which model to use and how to reach it. Decoding is always greedy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRef {
    pub backend_kind: BackendKind,
    pub model_id: String,
    pub max_new_tokens: usize,
}

impl Default for ModelRef {
    fn default() -> Self {
        Self {
            backend_kind: BackendKind::Needle,
            model_id: "needle".into(),
            max_new_tokens: 64,
        }
    }
}
