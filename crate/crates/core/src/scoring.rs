//! From a question and a grounding context to a utility score.
//!
//! 1. Render the grounded prompt and generate greedily; the generation's own
//!    scores are the grounded scores.
//! 2. Teacher-force the same tokens on the ungrounded prompt (needed only by
//!    key-token formulations).
//! 3. Full mode additionally generates without context and scores that
//!    generation on its own.

use serde::{Deserialize, Serialize};

use crate::backend::{assemble_prompt, to_token_scores, GroundingContext, LanguageModel, PromptSpec};
use crate::error::Result;
use crate::metric::{
    confidence, grogu, ungrounded_confidence, ConfidenceFormulation, GenerationTrace, KeyTokenConfig, TokenScore,
    UtilityMode, UtilityScore,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub prompt: PromptSpec,
    pub key_tokens: KeyTokenConfig,
    pub mode: UtilityMode,
    pub max_new_tokens: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            prompt: PromptSpec::default(),
            key_tokens: KeyTokenConfig::default(),
            mode: UtilityMode::GroundedOnly,
            max_new_tokens: 64,
        }
    }
}

/// A grounded generation, its answer text and its teacher-forced scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTrace {
    pub trace: GenerationTrace,
    pub answer: String,
}

/// The ungrounded generation's scores, shared by every context of a question.
#[derive(Debug, Clone, PartialEq)]
pub struct UngroundedGeneration {
    pub tokens: Vec<String>,
    pub scores: Vec<TokenScore>,
}

pub struct Scorer<'a> {
    model: &'a dyn LanguageModel,
    cfg: &'a ScoringConfig,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a dyn LanguageModel, cfg: &'a ScoringConfig) -> Self {
        Self { model, cfg }
    }

    pub fn model(&self) -> &dyn LanguageModel {
        self.model
    }

    pub fn config(&self) -> &ScoringConfig {
        self.cfg
    }

    /// Generates under `context` and, when `with_ungrounded` is set, scores
    /// the generation without it.
    pub fn trace_context(
        &self,
        question: &str,
        history: &[String],
        context: &GroundingContext,
        with_ungrounded: bool,
    ) -> Result<ContextTrace> {
        let grounded = assemble_prompt(&self.cfg.prompt, question, history, Some(context))?;
        let generation = self.model.greedy_generate(&grounded, self.cfg.max_new_tokens)?;
        let answer = self.model.detokenize(&generation.tokens);
        let grounded_scores = to_token_scores(&generation.scores)?;
        let ungrounded_scores = if with_ungrounded && !generation.tokens.is_empty() {
            let bare = assemble_prompt(&self.cfg.prompt, question, history, None)?;
            Some(to_token_scores(&self.model.force_score(&bare, &generation.tokens)?)?)
        } else {
            None
        };
        let trace = GenerationTrace::new(
            generation.tokens,
            grounded_scores,
            ungrounded_scores,
            self.model.model_id(),
        )?;
        Ok(ContextTrace { trace, answer })
    }

    pub fn ungrounded_generation(&self, question: &str, history: &[String]) -> Result<UngroundedGeneration> {
        let bare = assemble_prompt(&self.cfg.prompt, question, history, None)?;
        let g = self.model.greedy_generate(&bare, self.cfg.max_new_tokens)?;
        Ok(UngroundedGeneration {
            scores: to_token_scores(&g.scores)?,
            tokens: g.tokens,
        })
    }

    /// Utility of a traced context under `formulation`.
    pub fn utility(
        &self,
        ct: &ContextTrace,
        ungrounded: Option<&UngroundedGeneration>,
        formulation: ConfidenceFormulation,
    ) -> Result<UtilityScore> {
        let g = confidence(&ct.trace, formulation, &self.cfg.key_tokens)?;
        let u = match (self.cfg.mode, ungrounded) {
            (UtilityMode::Full, Some(u)) => Some(ungrounded_confidence(&u.scores, formulation, &self.cfg.key_tokens)?),
            _ => None,
        };
        grogu(g, u, self.cfg.mode)
    }

    /// One-shot convenience: trace `context` and score it.
    pub fn score(
        &self,
        question: &str,
        history: &[String],
        context: &GroundingContext,
        formulation: ConfidenceFormulation,
    ) -> Result<(UtilityScore, ContextTrace)> {
        let ct = self.trace_context(question, history, context, formulation.uses_key_tokens())?;
        let u = match self.cfg.mode {
            UtilityMode::Full => Some(self.ungrounded_generation(question, history)?),
            UtilityMode::GroundedOnly => None,
        };
        Ok((self.utility(&ct, u.as_ref(), formulation)?, ct))
    }
}
