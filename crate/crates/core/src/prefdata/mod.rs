//! Preference data for query rewriters, labelled by grounding utility.
//!
//! Every candidate rewrite of a conversational question retrieves its own
//! documents; the downstream model's utility for those documents scores the
//! rewrite. The best rewrite per question becomes an SFT target, and the best
//! and worst form a DPO pair. Pairs with the smallest utility gaps are
//! dropped.

mod cache;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::{cache_key, ScoreCache, ScoreCacheEntry};

use crate::backend::GroundingContext;
use crate::error::{Error, Result};
use crate::eval::Skipped;
use crate::io::{read_jsonl, write_jsonl};
use crate::metric::{ConfidenceFormulation, UtilityScore};
use crate::retrieval::{retrieve, Bm25Params, InvertedIndex, RetrievalResult};
use crate::scoring::Scorer;

/// Input line: `{"qid", "conversation": [..], "question", "rewrites": [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteSet {
    pub qid: String,
    /// Prior turns, oldest first.
    #[serde(default)]
    pub conversation: Vec<String>,
    pub question: String,
    pub rewrites: Vec<String>,
}

impl RewriteSet {
    /// Drops repeated rewrites, keeping the first occurrence.
    pub fn dedup(&mut self) {
        let mut seen = std::collections::HashSet::new();
        self.rewrites.retain(|r| seen.insert(r.clone()));
    }
}

pub fn read_rewrite_sets(path: &Path) -> Result<Vec<RewriteSet>> {
    let mut sets: Vec<RewriteSet> = read_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    for s in &mut sets {
        if !seen.insert(s.qid.clone()) {
            return Err(Error::Structural(format!("duplicate qid `{}` in rewrites", s.qid)));
        }
        s.dedup();
    }
    Ok(sets)
}

/// The rewriter's input for a conversation.
pub fn rewriter_prompt(set: &RewriteSet) -> String {
    let mut s = String::from(
        "Rewrite the last question so that it can be understood without the conversation.\n\nConversation:\n",
    );
    for turn in &set.conversation {
        s.push_str(turn);
        s.push('\n');
    }
    s.push_str("Question: ");
    s.push_str(&set.question);
    s.push_str("\nRewrite:");
    s
}

/// What the downstream model is asked while a rewrite's documents are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionSlot {
    /// The user's question with its conversation history.
    #[default]
    Original,
    /// The rewrite itself, without history.
    Rewrite,
}

impl std::str::FromStr for QuestionSlot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Self::Original),
            "rewrite" => Ok(Self::Rewrite),
            other => Err(Error::Config(format!("unknown question slot `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefConfig {
    pub formulation: ConfidenceFormulation,
    pub top_n: usize,
    pub keep_fraction: f64,
    pub question_slot: QuestionSlot,
}

impl Default for PrefConfig {
    fn default() -> Self {
        Self {
            formulation: ConfidenceFormulation::KeyEntropy,
            top_n: 10,
            keep_fraction: 0.5,
            question_slot: QuestionSlot::Original,
        }
    }
}

impl PrefConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 {
            return Err(Error::Config("top_n must be at least 1".into()));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "keep_fraction must lie in (0, 1], got {}",
                self.keep_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteScore {
    pub rewrite: String,
    pub retrieval: RetrievalResult,
    pub utility: UtilityScore,
    /// The rewrite retrieved nothing and was scored with an empty context.
    pub empty_retrieval: bool,
}

/// Retrieves with `rewrite` and scores the retrieved documents.
pub fn score_rewrite(
    rewrite: &str,
    set: &RewriteSet,
    index: &InvertedIndex,
    bm25: &Bm25Params,
    scorer: &Scorer<'_>,
    cfg: &PrefConfig,
    cache: Option<&ScoreCache>,
) -> Result<RewriteScore> {
    let retrieval = retrieve(index, bm25, &set.qid, rewrite, cfg.top_n);
    let empty_retrieval = retrieval.ranked.is_empty();
    if empty_retrieval {
        log::warn!(
            "{}: rewrite {rewrite:?} retrieved nothing; scoring an empty context",
            set.qid
        );
    }
    let (question, history): (&str, &[String]) = match cfg.question_slot {
        QuestionSlot::Original => (&set.question, &set.conversation),
        QuestionSlot::Rewrite => (rewrite, &[]),
    };
    let doc_ids: Vec<String> = retrieval.doc_ids().map(str::to_string).collect();
    let key = cache_key(scorer, cfg.formulation, question, history, rewrite, &doc_ids)?;
    if let Some(u) = cache.and_then(|c| c.get(&key)) {
        return Ok(RewriteScore {
            rewrite: rewrite.to_string(),
            retrieval,
            utility: u,
            empty_retrieval,
        });
    }
    let docs = doc_ids
        .iter()
        .map(|d| index.document(d).cloned())
        .collect::<Result<Vec<_>>>()?;
    let (utility, _) = scorer.score(question, history, &GroundingContext::new(docs), cfg.formulation)?;
    if let Some(c) = cache {
        c.insert(&key, &utility)?;
    }
    Ok(RewriteScore {
        rewrite: rewrite.to_string(),
        retrieval,
        utility,
        empty_retrieval,
    })
}

/// Scored rewrites of one question. Failed rewrites are left out and noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QidScores {
    pub qid: String,
    pub prompt: String,
    pub scores: Vec<(String, f64)>,
}

/// Scores every rewrite of every set in parallel.
pub fn score_rewrite_sets(
    sets: &[RewriteSet],
    index: &InvertedIndex,
    bm25: &Bm25Params,
    scorer: &Scorer<'_>,
    cfg: &PrefConfig,
    cache: Option<&ScoreCache>,
) -> Result<(Vec<QidScores>, Vec<RewriteScore>, Vec<Skipped>)> {
    cfg.validate()?;
    let jobs: Vec<(usize, &str)> = sets
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.rewrites.iter().map(move |r| (i, r.as_str())))
        .collect();
    let results: Vec<Result<RewriteScore>> = jobs
        .par_iter()
        .map(|&(i, r)| score_rewrite(r, &sets[i], index, bm25, scorer, cfg, cache))
        .collect();
    let mut per_qid: Vec<QidScores> = sets
        .iter()
        .map(|s| QidScores {
            qid: s.qid.clone(),
            prompt: rewriter_prompt(s),
            scores: Vec::new(),
        })
        .collect();
    let mut all = Vec::new();
    let mut skipped = Vec::new();
    for (&(i, r), res) in jobs.iter().zip(results) {
        match res {
            Ok(s) => {
                per_qid[i].scores.push((s.rewrite.clone(), s.utility.value));
                all.push(s);
            }
            Err(e) if e.class() == crate::ErrorClass::Backend => {
                log::warn!("{}: rewrite {r:?} failed: {e}", sets[i].qid);
                skipped.push(Skipped::new(&sets[i].qid, format!("rewrite {r:?}: {e}")));
            }
            Err(e) => return Err(e),
        }
    }
    Ok((per_qid, all, skipped))
}

/// Trainer input for supervised warm-up. Field order is the output order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub target: String,
    pub score: f64,
    pub qid: String,
}

/// Trainer input for DPO. Field order is the output order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub chosen_score: f64,
    pub rejected_score: f64,
    pub gap: f64,
    pub qid: String,
}

// Highest score; ties go to the lexicographically smallest rewrite.
fn best(scores: &[(String, f64)]) -> Option<&(String, f64)> {
    scores
        .iter()
        .min_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)))
}

// Lowest score; ties go to the lexicographically smallest rewrite.
fn worst(scores: &[(String, f64)]) -> Option<&(String, f64)> {
    scores
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
}

/// One SFT record per question with at least one scored rewrite.
pub fn build_sft_records(scores: &[QidScores]) -> (Vec<SftRecord>, Vec<Skipped>) {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for q in scores {
        match best(&q.scores) {
            Some((target, score)) => out.push(SftRecord {
                prompt: q.prompt.clone(),
                target: target.clone(),
                score: *score,
                qid: q.qid.clone(),
            }),
            None => skipped.push(Skipped::new(&q.qid, "no rewrite could be scored")),
        }
    }
    (out, skipped)
}

/// One (best, worst) pair per question; questions whose scores are all
/// equal have no preference and are skipped.
pub fn build_dpo_pairs(scores: &[QidScores]) -> (Vec<PreferencePair>, Vec<Skipped>) {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for q in scores {
        let (Some(hi), Some(lo)) = (best(&q.scores), worst(&q.scores)) else {
            skipped.push(Skipped::new(&q.qid, "no rewrite could be scored"));
            continue;
        };
        let gap = hi.1 - lo.1;
        if gap <= 0.0 {
            skipped.push(Skipped::new(&q.qid, "all rewrites score the same"));
            continue;
        }
        out.push(PreferencePair {
            prompt: q.prompt.clone(),
            chosen: hi.0.clone(),
            rejected: lo.0.clone(),
            chosen_score: hi.1,
            rejected_score: lo.1,
            gap,
            qid: q.qid.clone(),
        });
    }
    (out, skipped)
}

/// Number of pairs kept out of `n`: ⌈f·n⌉, at least one when `n > 0`.
pub fn keep_count(n: usize, keep_fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    // guard against 0.3 * 10 = 3.0000000000000004 rounding up to 4
    (((keep_fraction * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

/// Keeps the ⌈f·N⌉ pairs with the largest gaps. At the cut, equal gaps are
/// taken in ascending qid order. The result is sorted by qid.
pub fn filter_by_gap(pairs: &[PreferencePair], keep_fraction: f64) -> Vec<PreferencePair> {
    let m = keep_count(pairs.len(), keep_fraction);
    let mut ranked: Vec<&PreferencePair> = pairs.iter().collect();
    ranked.sort_by(|a, b| b.gap.total_cmp(&a.gap).then_with(|| a.qid.cmp(&b.qid)));
    let mut kept: Vec<PreferencePair> = ranked.into_iter().take(m).cloned().collect();
    kept.sort_by(|a, b| a.qid.cmp(&b.qid));
    kept
}

/// Writes records one per line; an empty list gives an empty file.
pub fn emit_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    if records.is_empty() {
        log::warn!("no records to write to {}", path.display());
    }
    write_jsonl(path, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(qid: &str, scores: &[(&str, f64)]) -> QidScores {
        QidScores {
            qid: qid.into(),
            prompt: "p".into(),
            scores: scores.iter().map(|(r, s)| (r.to_string(), *s)).collect(),
        }
    }

    fn pair(qid: &str, gap: f64) -> PreferencePair {
        PreferencePair {
            prompt: String::new(),
            chosen: "a".into(),
            rejected: "b".into(),
            chosen_score: gap,
            rejected_score: 0.0,
            gap,
            qid: qid.into(),
        }
    }

    #[test]
    fn sft_argmax_and_ties() {
        let (r, _) = build_sft_records(&[q("1", &[("r1", 0.2), ("r2", 0.8), ("r3", -0.1)])]);
        assert_eq!(r[0].target, "r2");
        let (r, _) = build_sft_records(&[q("1", &[("only", 0.0)])]);
        assert_eq!(r[0].target, "only");
        let (r, _) = build_sft_records(&[q("1", &[("zeta", 1.0), ("alpha", 1.0)])]);
        assert_eq!(r[0].target, "alpha");
        let (r, s) = build_sft_records(&[q("1", &[])]);
        assert!(r.is_empty());
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn dpo_pairs() {
        let (p, _) = build_dpo_pairs(&[q("1", &[("r1", 0.2), ("r2", 0.8), ("r3", -0.1)])]);
        assert_eq!((p[0].chosen.as_str(), p[0].rejected.as_str()), ("r2", "r3"));
        assert!((p[0].gap - 0.9).abs() < 1e-12);
        let (p, s) = build_dpo_pairs(&[q("1", &[("a", 0.5), ("b", 0.5)])]);
        assert!(p.is_empty() && s.len() == 1);
        let (p, _) = build_dpo_pairs(&[q("1", &[("a", -0.4), ("b", -0.9)])]);
        assert_eq!(p[0].chosen, "a");
        assert!((p[0].gap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gap_filter() {
        let pairs = [pair("a", 0.9), pair("b", 0.5), pair("c", 0.4), pair("d", 0.1)];
        let kept = filter_by_gap(&pairs, 0.5);
        assert_eq!(kept.iter().map(|p| p.gap).collect::<Vec<_>>(), [0.9, 0.5]);
        assert_eq!(filter_by_gap(&pairs[..1], 0.5).len(), 1);
        assert_eq!(filter_by_gap(&pairs, 1.0), pairs.to_vec());
        // ties at the cut fill in ascending qid order
        let tied = [pair("z", 1.0), pair("m", 1.0), pair("a", 1.0)];
        let kept = filter_by_gap(&tied, 0.5);
        assert_eq!(kept.iter().map(|p| p.qid.as_str()).collect::<Vec<_>>(), ["a", "m"]);
    }

    #[test]
    fn keep_count_edges() {
        assert_eq!(keep_count(10, 0.3), 3);
        assert_eq!(keep_count(4, 0.5), 2);
        assert_eq!(keep_count(5, 0.5), 3);
        assert_eq!(keep_count(1, 0.01), 1);
    }

    #[test]
    fn field_order() {
        let line = serde_json::to_string(&pair("q", 1.0)).unwrap();
        let keys: Vec<&str> = [
            "prompt",
            "chosen",
            "rejected",
            "chosen_score",
            "rejected_score",
            "gap",
            "qid",
        ]
        .to_vec();
        let positions: Vec<usize> = keys.iter().map(|k| line.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let sft = SftRecord {
            prompt: "p".into(),
            target: "t".into(),
            score: 0.5,
            qid: "q".into(),
        };
        assert_eq!(
            serde_json::to_string(&sft).unwrap(),
            r#"{"prompt":"p","target":"t","score":0.5,"qid":"q"}"#
        );
    }

    #[test]
    fn dedup_keeps_first() {
        let mut s = RewriteSet {
            qid: "1".into(),
            conversation: vec![],
            question: "q".into(),
            rewrites: vec!["b".into(), "a".into(), "b".into()],
        };
        s.dedup();
        assert_eq!(s.rewrites, ["b", "a"]);
    }
}
