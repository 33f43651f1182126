//! An analytic language model with closed-form next-token distributions.
//!
//! The Needle LM answers a question only from facts it can *see*. A fact is a
//! document sentence of the form `<term> is <answer words>.` where `<term>` is
//! a content word of the conversation (question or history). The model reads
//! documents in context order, but only the first `window` of them, and
//! answers with the first fact it finds.
//!
//! At every position the next-token distribution is one of two shapes:
//!
//! * peaked: probability `peak` on the expected token, the rest spread
//!   uniformly, with entropy `-λ ln λ - (1-λ) ln((1-λ)/(V-1))`;
//! * uniform over the vocabulary, with entropy `ln V`.
//!
//! The expected sequence is the fixed preamble, then the answer words, then
//! the end-of-sequence token. A position is peaked exactly when the prefix
//! so far matches that sequence; once the prefix diverges, or when no fact is
//! visible after the preamble, every later position is uniform. Uniform
//! argmax ties resolve to token id 0.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Generation, LanguageModel, PositionScore, Prompt};
use crate::error::{Error, Result};
use crate::retrieval::{is_stopword, tokenize_text};

pub const EOS_TOKEN: &str = "</s>";

const MAX_ANSWER_WORDS: usize = 16;

const DEFAULT_WORDS: [&str; 98] = [
    "edinburgh",
    "castle",
    "edie",
    "mccredie",
    "juliet",
    "cadzow",
    "london",
    "bridge",
    "paris",
    "tower",
    "river",
    "mountain",
    "valley",
    "harbor",
    "island",
    "forest",
    "garden",
    "palace",
    "temple",
    "market",
    "station",
    "library",
    "museum",
    "theater",
    "college",
    "village",
    "north",
    "south",
    "east",
    "west",
    "red",
    "blue",
    "green",
    "yellow",
    "silver",
    "golden",
    "black",
    "white",
    "purple",
    "orange",
    "lion",
    "eagle",
    "falcon",
    "wolf",
    "bear",
    "otter",
    "heron",
    "salmon",
    "oak",
    "maple",
    "willow",
    "cedar",
    "birch",
    "pine",
    "rose",
    "tulip",
    "iron",
    "copper",
    "granite",
    "marble",
    "amber",
    "coral",
    "pearl",
    "ruby",
    "emerald",
    "sapphire",
    "king",
    "queen",
    "prince",
    "duke",
    "captain",
    "doctor",
    "teacher",
    "pilot",
    "sailor",
    "farmer",
    "baker",
    "painter",
    "january",
    "march",
    "june",
    "october",
    "monday",
    "friday",
    "spring",
    "winter",
    "summer",
    "autumn",
    "one",
    "two",
    "three",
    "four",
    "seven",
    "twelve",
    "hundred",
    "thousand",
    "harvest",
    "lantern",
];

/// `unknown` (id 0), 98 content words, then `</s>`: 100 tokens.
pub fn default_vocabulary() -> Vec<String> {
    let mut v = Vec::with_capacity(DEFAULT_WORDS.len() + 2);
    v.push("unknown".to_string());
    v.extend(DEFAULT_WORDS.iter().map(|w| w.to_string()));
    v.push(EOS_TOKEN.to_string());
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleLmParams {
    /// Vocabulary words; `</s>` is appended when absent.
    pub vocab: Vec<String>,
    pub peak: f64,
    /// Number of leading context documents the model can see; `None` is unbounded.
    pub window: Option<usize>,
    /// Scaffolding words emitted before every answer, peaked regardless of context.
    #[serde(default)]
    pub preamble: Vec<String>,
}

impl Default for NeedleLmParams {
    fn default() -> Self {
        Self {
            vocab: default_vocabulary(),
            peak: 0.9,
            window: None,
            preamble: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Uniform,
    Peaked(u32),
}

#[derive(Debug, Clone)]
pub struct NeedleLm {
    id: String,
    params: NeedleLmParams,
    ids: HashMap<String, u32>,
    eos: u32,
    preamble: Vec<u32>,
    lp_peak: f64,
    lp_tail: f64,
    lp_uniform: f64,
}

impl NeedleLm {
    pub fn new(id: impl Into<String>, mut params: NeedleLmParams) -> Result<Self> {
        if !params.vocab.iter().any(|w| w == EOS_TOKEN) {
            params.vocab.push(EOS_TOKEN.to_string());
        }
        let v = params.vocab.len();
        if v < 2 {
            return Err(Error::Config("needle vocabulary needs at least two tokens".into()));
        }
        if !(params.peak > 1.0 / v as f64 && params.peak < 1.0) {
            return Err(Error::Config(format!(
                "peak must lie in (1/V, 1) = ({}, 1), got {}",
                1.0 / v as f64,
                params.peak
            )));
        }
        if params.window == Some(0) {
            return Err(Error::Config("window must be at least 1 document".into()));
        }
        let mut ids = HashMap::with_capacity(v);
        for (i, w) in params.vocab.iter().enumerate() {
            if ids.insert(w.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary word `{w}`")));
            }
        }
        let eos = ids[EOS_TOKEN];
        let preamble = params
            .preamble
            .iter()
            .map(|w| {
                ids.get(w.as_str())
                    .copied()
                    .ok_or_else(|| Error::Config(format!("preamble word `{w}` not in vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        let lam = params.peak;
        Ok(Self {
            id: id.into(),
            lp_peak: lam.ln(),
            lp_tail: ((1.0 - lam) / (v - 1) as f64).ln(),
            lp_uniform: -(v as f64).ln(),
            params,
            ids,
            eos,
            preamble,
        })
    }

    pub fn params(&self) -> &NeedleLmParams {
        &self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.params.vocab.len()
    }

    /// Entropy of the peaked shape in nats.
    pub fn peaked_entropy(&self) -> f64 {
        let lam = self.params.peak;
        -lam * lam.ln() - (1.0 - lam) * ((1.0 - lam) / (self.vocab_size() - 1) as f64).ln()
    }

    pub fn uniform_entropy(&self) -> f64 {
        (self.vocab_size() as f64).ln()
    }

    fn token_text(&self, id: u32) -> String {
        let w = &self.params.vocab[id as usize];
        if id == self.eos {
            w.clone()
        } else {
            format!(" {w}")
        }
    }

    fn token_id(&self, token: &str) -> Result<u32> {
        let word = token.strip_prefix(' ').unwrap_or(token);
        self.ids
            .get(word)
            .copied()
            .ok_or_else(|| Error::Structural(format!("token `{token}` is not in the needle vocabulary")))
    }

    /// Answer words of the first visible fact about the conversation, if any.
    pub fn visible_answer(&self, prompt: &Prompt) -> Option<Vec<u32>> {
        let mut terms: Vec<String> = prompt
            .history
            .iter()
            .chain(std::iter::once(&prompt.question))
            .flat_map(|t| tokenize_text(t))
            .filter(|t| !is_stopword(t))
            .collect();
        terms.sort();
        terms.dedup();
        let visible = self.params.window.unwrap_or(usize::MAX);
        prompt
            .documents
            .iter()
            .take(visible)
            .find_map(|d| self.scan_fact(&d.contents, &terms))
    }

    fn scan_fact(&self, text: &str, terms: &[String]) -> Option<Vec<u32>> {
        let words: Vec<&str> = text.split_whitespace().collect();
        for i in 0..words.len().saturating_sub(2) {
            if normalize_word(words[i + 1]) != "is" || terms.binary_search(&normalize_word(words[i])).is_err() {
                continue;
            }
            let mut answer = Vec::new();
            for w in &words[i + 2..] {
                match self.ids.get(normalize_word(w).as_str()) {
                    Some(&id) if id != self.eos && answer.len() < MAX_ANSWER_WORDS => answer.push(id),
                    _ => break,
                }
                if w.ends_with(['.', ',', ';', '!', '?']) {
                    break;
                }
            }
            if !answer.is_empty() {
                return Some(answer);
            }
        }
        None
    }

    fn target(&self, prompt: &Prompt) -> Vec<u32> {
        let mut t = self.preamble.clone();
        if let Some(answer) = self.visible_answer(prompt) {
            t.extend(answer);
            t.push(self.eos);
        }
        t
    }

    fn shape(target: &[u32], prefix: &[u32]) -> Shape {
        let i = prefix.len();
        if i < target.len() && prefix == &target[..i] {
            Shape::Peaked(target[i])
        } else {
            Shape::Uniform
        }
    }

    fn position(&self, shape: Shape, chosen: u32) -> PositionScore {
        let top = (0..self.vocab_size() as u32)
            .map(|id| {
                let lp = match shape {
                    Shape::Uniform => self.lp_uniform,
                    Shape::Peaked(t) if t == id => self.lp_peak,
                    Shape::Peaked(_) => self.lp_tail,
                };
                (self.token_text(id), lp)
            })
            .collect::<Vec<_>>();
        PositionScore {
            token: self.token_text(chosen),
            logprob: top[chosen as usize].1,
            top,
            residual: 0.0,
            vocab_size: self.vocab_size(),
        }
    }
}

fn normalize_word(w: &str) -> String {
    w.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl LanguageModel for NeedleLm {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn greedy_generate(&self, prompt: &Prompt, max_new_tokens: usize) -> Result<Generation> {
        let target = self.target(prompt);
        let mut ids = Vec::new();
        let mut scores = Vec::new();
        while ids.len() < max_new_tokens {
            let shape = Self::shape(&target, &ids);
            let next = match shape {
                Shape::Peaked(t) => t,
                Shape::Uniform => 0,
            };
            scores.push(self.position(shape, next));
            ids.push(next);
            if next == self.eos {
                break;
            }
        }
        Ok(Generation {
            tokens: ids.iter().map(|&id| self.token_text(id)).collect(),
            scores,
        })
    }

    fn force_score(&self, prompt: &Prompt, forced: &[String]) -> Result<Vec<PositionScore>> {
        if forced.is_empty() {
            return Err(Error::Structural("nothing to score".into()));
        }
        let target = self.target(prompt);
        let ids = forced.iter().map(|t| self.token_id(t)).collect::<Result<Vec<_>>>()?;
        Ok((0..ids.len())
            .map(|i| self.position(Self::shape(&target, &ids[..i]), ids[i]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{assemble_prompt, to_token_scores, GroundingContext, PromptSpec};
    use crate::retrieval::DocumentRecord;
    use approx::assert_abs_diff_eq;

    fn prompt(question: &str, docs: &[&str]) -> Prompt {
        let ctx = GroundingContext::new(
            docs.iter()
                .enumerate()
                .map(|(i, t)| DocumentRecord::new(format!("d{i}"), "", *t))
                .collect(),
        );
        assemble_prompt(&PromptSpec::default(), question, &[], Some(&ctx)).unwrap()
    }

    fn needle(window: Option<usize>) -> NeedleLm {
        NeedleLm::new(
            "needle",
            NeedleLmParams {
                window,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn closed_form_entropies() {
        let m = needle(None);
        assert_abs_diff_eq!(m.peaked_entropy(), 0.784595, epsilon = 1e-6);
        assert_abs_diff_eq!(m.uniform_entropy(), 4.605170, epsilon = 1e-6);
    }

    #[test]
    fn answers_from_visible_fact() {
        let m = needle(None);
        let p = prompt(
            "where is the tower of zorvath?",
            &["filler text here", "zorvath is edinburgh castle. more"],
        );
        let g = m.greedy_generate(&p, 64).unwrap();
        assert_eq!(g.tokens, [" edinburgh", " castle", EOS_TOKEN]);
        assert_eq!(m.detokenize(&g.tokens), "edinburgh castle");
        let scores = to_token_scores(&g.scores).unwrap();
        for s in &scores {
            assert_abs_diff_eq!(s.entropy_nats, m.peaked_entropy(), epsilon = 1e-12);
        }
    }

    #[test]
    fn absent_answer_repeats_lowest_id() {
        let m = needle(None);
        let p = prompt("where is zorvath?", &["nothing relevant"]);
        let g = m.greedy_generate(&p, 5).unwrap();
        assert_eq!(g.tokens, vec![" unknown".to_string(); 5]);
        for s in to_token_scores(&g.scores).unwrap() {
            assert_abs_diff_eq!(s.entropy_nats, m.uniform_entropy(), epsilon = 1e-12);
        }
    }

    #[test]
    fn forcing_reproduces_generation() {
        let m = needle(None);
        let p = prompt("what of zorvath", &["zorvath is red oak."]);
        let g = m.greedy_generate(&p, 64).unwrap();
        let f = m.force_score(&p, &g.tokens).unwrap();
        assert_eq!(f, g.scores);
    }

    #[test]
    fn window_hides_late_documents() {
        let mut docs = vec!["filler"; 11];
        docs[10] = "zorvath is red oak.";
        let p = prompt("zorvath?", &docs);
        let wide = needle(None);
        let narrow = needle(Some(10));
        let answer = wide.greedy_generate(&p, 64).unwrap().tokens;
        let scores = to_token_scores(&narrow.force_score(&p, &answer).unwrap()).unwrap();
        for s in scores {
            assert_abs_diff_eq!(s.entropy_nats, 100f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn preamble_is_peaked_without_context() {
        let m = NeedleLm::new(
            "n",
            NeedleLmParams {
                preamble: vec!["one".into(), "two".into()],
                ..Default::default()
            },
        )
        .unwrap();
        let p = prompt("zorvath?", &["zorvath is red oak."]);
        let g = m.greedy_generate(&p, 64).unwrap();
        assert_eq!(g.tokens, [" one", " two", " red", " oak", EOS_TOKEN]);
        let bare = assemble_prompt(&PromptSpec::default(), "zorvath?", &[], None).unwrap();
        let u = to_token_scores(&m.force_score(&bare, &g.tokens).unwrap()).unwrap();
        assert_abs_diff_eq!(u[0].entropy_nats, m.peaked_entropy(), epsilon = 1e-12);
        assert_abs_diff_eq!(u[2].entropy_nats, m.uniform_entropy(), epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_params() {
        let p = NeedleLmParams {
            peak: 0.001,
            ..Default::default()
        };
        assert!(NeedleLm::new("x", p).is_err());
        assert_eq!(default_vocabulary().len(), 100);
    }
}
