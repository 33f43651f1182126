//! Concordance between utility and downstream correctness.
//!
//! Each query gets two contexts that both contain the gold document: one
//! padded with retrieved documents ("w/ retr") and one padded with random
//! documents ("w/ rand"). The model answers under each; only queries where
//! exactly one answer is correct are kept. A pair is concordant when the
//! context that led to the correct answer has the higher utility.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::answer_correct;
use super::stats::{concordance_from_diffs, ConcordanceResult, Confusion, TiePolicy};
use super::{conversational_query, query_rng, Skipped};
use crate::backend::GroundingContext;
use crate::error::{Error, Result};
use crate::metric::{ConfidenceFormulation, UtilityMode, UtilityScore};
use crate::retrieval::{bm25_score, retrieve, Bm25Params, InvertedIndex, QueryRecord};
use crate::scoring::Scorer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceCase {
    pub qid: String,
    pub context_a: GroundingContext,
    pub context_b: GroundingContext,
    pub correct_a: bool,
    pub correct_b: bool,
    pub utility_a: UtilityScore,
    pub utility_b: UtilityScore,
}

impl ConcordanceCase {
    fn check(&self) -> Result<()> {
        if self.correct_a == self.correct_b {
            return Err(Error::Structural(format!(
                "case {} must have exactly one correct context",
                self.qid
            )));
        }
        Ok(())
    }
}

/// τ over cases; `ties` decides how exact utility ties count.
pub fn concordance_tau(cases: &[ConcordanceCase], ties: TiePolicy) -> Result<ConcordanceResult> {
    let diffs = cases
        .iter()
        .map(|c| {
            c.check()?;
            Ok(correct_minus_incorrect(
                c.correct_a,
                c.utility_a.value,
                c.utility_b.value,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    concordance_from_diffs(&diffs, ties)
}

fn correct_minus_incorrect(correct_a: bool, ua: f64, ub: f64) -> f64 {
    if correct_a {
        ua - ub
    } else {
        ub - ua
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEval {
    pub accuracy: f64,
    /// F1 of the "w/ rand is correct" class; `None` when predictions are single-class.
    pub f1: Option<f64>,
    pub macro_f1: Option<f64>,
    pub confusion: Confusion,
}

/// Predicts the higher-utility context as the correct one. The positive class
/// is "w/ rand is correct"; a utility tie predicts "w/ retr".
pub fn utility_classifier_eval(cases: &[ConcordanceCase]) -> Result<ClassifierEval> {
    for c in cases {
        c.check()?;
    }
    classify(
        cases
            .iter()
            .map(|c| (c.correct_b, c.utility_a.value, c.utility_b.value)),
    )
}

fn classify(rows: impl Iterator<Item = (bool, f64, f64)>) -> Result<ClassifierEval> {
    let confusion = Confusion::from_pairs(rows.map(|(b_correct, ua, ub)| (ub > ua, b_correct)));
    Ok(ClassifierEval {
        accuracy: confusion
            .accuracy()
            .ok_or_else(|| Error::Undefined("no cases to classify".into()))?,
        f1: confusion.f1(),
        macro_f1: confusion.macro_f1(),
        confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldPlacement {
    First,
    Last,
    /// Seeded uniform position, drawn separately for each context.
    #[default]
    Random,
}

impl std::str::FromStr for GoldPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Self::First),
            "last" => Ok(Self::Last),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!("unknown gold placement `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceConfig {
    /// Non-gold documents added to each context.
    pub padding: usize,
    pub gold_placement: GoldPlacement,
    pub ties: TiePolicy,
}

impl Default for ConcordanceConfig {
    fn default() -> Self {
        Self {
            padding: 4,
            gold_placement: GoldPlacement::Random,
            ties: TiePolicy::Discordant,
        }
    }
}

/// The two contexts of one query, before the model has answered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordancePair {
    pub query: QueryRecord,
    pub context_a: GroundingContext,
    pub context_b: GroundingContext,
}

pub fn build_concordance_pairs(
    queries: &[QueryRecord],
    index: &InvertedIndex,
    bm25: &Bm25Params,
    cfg: &ConcordanceConfig,
    seed: u64,
) -> Result<(Vec<ConcordancePair>, Vec<Skipped>)> {
    if cfg.padding == 0 {
        return Err(Error::Config("concordance padding must be at least 1".into()));
    }
    if index.doc_count() <= cfg.padding {
        return Err(Error::Structural("corpus too small for the requested padding".into()));
    }
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for q in queries {
        let Some(gold_id) = q.gold_doc_id.as_deref() else {
            skipped.push(Skipped::new(&q.qid, "no gold document"));
            continue;
        };
        if q.gold_answers.is_empty() {
            skipped.push(Skipped::new(&q.qid, "no gold answers"));
            continue;
        }
        let gold = index.document(gold_id)?.clone();
        let run = retrieve(index, bm25, &q.qid, &conversational_query(q), cfg.padding + 1);
        let retrieved: Vec<_> = run
            .doc_ids()
            .filter(|&d| d != gold_id)
            .take(cfg.padding)
            .map(|d| index.document(d).cloned())
            .collect::<Result<_>>()?;
        if retrieved.len() < cfg.padding {
            skipped.push(Skipped::new(&q.qid, "too few retrieved documents"));
            continue;
        }
        let mut rng = query_rng(seed, &q.qid, "concordance");
        let mut pool: Vec<usize> = (0..index.doc_count())
            .filter(|&i| index.documents()[i].id != gold_id)
            .collect();
        pool.shuffle(&mut rng);
        let random: Vec<_> = pool[..cfg.padding]
            .iter()
            .map(|&i| index.documents()[i].clone())
            .collect();
        let mut with_gold = |mut docs: Vec<_>| {
            let pos = match cfg.gold_placement {
                GoldPlacement::First => 0,
                GoldPlacement::Last => cfg.padding,
                GoldPlacement::Random => rng.gen_range(0..=cfg.padding),
            };
            docs.insert(pos, gold.clone());
            GroundingContext::new(docs)
        };
        let context_a = with_gold(retrieved);
        let context_b = with_gold(random);
        pairs.push(ConcordancePair {
            query: q.clone(),
            context_a,
            context_b,
        });
    }
    Ok((pairs, skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceRow {
    pub metric: String,
    pub result: ConcordanceResult,
    pub classifier: ClassifierEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceCaseRow {
    pub qid: String,
    pub correct_a: bool,
    pub correct_b: bool,
    pub answer_a: String,
    pub answer_b: String,
    pub relevance_a: f64,
    pub relevance_b: f64,
    /// Parallel to [`ConcordanceReport::formulations`].
    pub utility_a: Vec<f64>,
    pub utility_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceReport {
    pub model_id: String,
    pub mode: UtilityMode,
    pub ties: TiePolicy,
    pub formulations: Vec<ConfidenceFormulation>,
    pub pairs: usize,
    pub both_correct: usize,
    pub neither_correct: usize,
    /// One row per formulation, then the retriever-relevance baseline.
    pub rows: Vec<ConcordanceRow>,
    pub skipped: Vec<Skipped>,
    pub per_case: Vec<ConcordanceCaseRow>,
    #[serde(skip)]
    pub cases: Vec<Vec<ConcordanceCase>>,
}

impl ConcordanceReport {
    pub fn row(&self, metric: &str) -> Option<&ConcordanceRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }
}

struct Scored {
    correct_a: bool,
    correct_b: bool,
    answer_a: String,
    answer_b: String,
    utility_a: Vec<UtilityScore>,
    utility_b: Vec<UtilityScore>,
}

fn score_pair(scorer: &Scorer<'_>, pair: &ConcordancePair, formulations: &[ConfidenceFormulation]) -> Result<Scored> {
    let q = &pair.query;
    let with_ungrounded = formulations.iter().any(|f| f.uses_key_tokens());
    let bare = match scorer.config().mode {
        UtilityMode::Full => Some(scorer.ungrounded_generation(&q.question, &q.history)?),
        UtilityMode::GroundedOnly => None,
    };
    let a = scorer.trace_context(&q.question, &q.history, &pair.context_a, with_ungrounded)?;
    let b = scorer.trace_context(&q.question, &q.history, &pair.context_b, with_ungrounded)?;
    let utilities = |t| {
        formulations
            .iter()
            .map(|&f| scorer.utility(t, bare.as_ref(), f))
            .collect::<Result<Vec<_>>>()
    };
    Ok(Scored {
        correct_a: answer_correct(&a.answer, &q.gold_answers),
        correct_b: answer_correct(&b.answer, &q.gold_answers),
        utility_a: utilities(&a)?,
        utility_b: utilities(&b)?,
        answer_a: a.answer,
        answer_b: b.answer,
    })
}

/// Mean BM25 score of the context's documents for the question.
fn relevance(index: &InvertedIndex, bm25: &Bm25Params, q: &QueryRecord, ctx: &GroundingContext) -> Result<f64> {
    let terms = index.tokenizer().tokenize(&conversational_query(q));
    let mut total = 0.0;
    for d in &ctx.documents {
        total += bm25_score(index, bm25, &terms, &d.id)?;
    }
    Ok(total / ctx.documents.len().max(1) as f64)
}

/// Answers and scores every pair, keeps exactly-one-correct cases, and
/// reports τ and classifier quality per formulation and for BM25 relevance.
pub fn score_concordance(
    pairs: &[ConcordancePair],
    formulations: &[ConfidenceFormulation],
    scorer: &Scorer<'_>,
    index: &InvertedIndex,
    bm25: &Bm25Params,
    ties: TiePolicy,
) -> Result<ConcordanceReport> {
    if formulations.is_empty() {
        return Err(Error::Config("no formulations requested".into()));
    }
    let results: Vec<Result<Scored>> = pairs.par_iter().map(|p| score_pair(scorer, p, formulations)).collect();
    let mut skipped = Vec::new();
    let (mut both, mut neither) = (0, 0);
    let mut per_case = Vec::new();
    let mut cases: Vec<Vec<ConcordanceCase>> = vec![Vec::new(); formulations.len()];
    for (p, r) in pairs.iter().zip(results) {
        let s = match r {
            Ok(s) => s,
            Err(e) if e.class() == crate::ErrorClass::Backend => {
                log::warn!("concordance case {} skipped: {e}", p.query.qid);
                skipped.push(Skipped::new(&p.query.qid, e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        match (s.correct_a, s.correct_b) {
            (true, true) => both += 1,
            (false, false) => neither += 1,
            _ => {
                for (k, list) in cases.iter_mut().enumerate() {
                    list.push(ConcordanceCase {
                        qid: p.query.qid.clone(),
                        context_a: p.context_a.clone(),
                        context_b: p.context_b.clone(),
                        correct_a: s.correct_a,
                        correct_b: s.correct_b,
                        utility_a: s.utility_a[k].clone(),
                        utility_b: s.utility_b[k].clone(),
                    });
                }
                per_case.push(ConcordanceCaseRow {
                    qid: p.query.qid.clone(),
                    correct_a: s.correct_a,
                    correct_b: s.correct_b,
                    relevance_a: relevance(index, bm25, &p.query, &p.context_a)?,
                    relevance_b: relevance(index, bm25, &p.query, &p.context_b)?,
                    utility_a: s.utility_a.iter().map(|u| u.value).collect(),
                    utility_b: s.utility_b.iter().map(|u| u.value).collect(),
                    answer_a: s.answer_a,
                    answer_b: s.answer_b,
                });
            }
        }
    }
    if per_case.is_empty() {
        return Err(Error::Undefined(
            "no query has exactly one correct context; tau is undefined".into(),
        ));
    }
    let mut rows = Vec::new();
    for (k, &f) in formulations.iter().enumerate() {
        rows.push(ConcordanceRow {
            metric: f.name().to_string(),
            result: concordance_tau(&cases[k], ties)?,
            classifier: utility_classifier_eval(&cases[k])?,
        });
    }
    let rel_diffs: Vec<f64> = per_case
        .iter()
        .map(|c| correct_minus_incorrect(c.correct_a, c.relevance_a, c.relevance_b))
        .collect();
    rows.push(ConcordanceRow {
        metric: "relevance".into(),
        result: concordance_from_diffs(&rel_diffs, ties)?,
        classifier: classify(per_case.iter().map(|c| (c.correct_b, c.relevance_a, c.relevance_b)))?,
    });
    Ok(ConcordanceReport {
        model_id: scorer.model().model_id().to_string(),
        mode: scorer.config().mode,
        ties,
        formulations: formulations.to_vec(),
        pairs: pairs.len(),
        both_correct: both,
        neither_correct: neither,
        rows,
        skipped,
        per_case,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn util(v: f64) -> UtilityScore {
        UtilityScore {
            value: v,
            formulation: ConfidenceFormulation::KeyEntropy,
            grounded_confidence: v,
            ungrounded_confidence: None,
            mode: UtilityMode::GroundedOnly,
            key_token_indices: vec![],
            grounded_bounds: None,
        }
    }

    fn case(correct_a: bool, ua: f64, ub: f64) -> ConcordanceCase {
        ConcordanceCase {
            qid: "q".into(),
            context_a: GroundingContext::default(),
            context_b: GroundingContext::default(),
            correct_a,
            correct_b: !correct_a,
            utility_a: util(ua),
            utility_b: util(ub),
        }
    }

    #[test]
    fn tau_counts() {
        let cases = [
            case(true, 1.0, 0.0),
            case(false, 0.0, 1.0),
            case(true, 2.0, 1.0),
            case(false, 1.0, 0.0),
        ];
        let r = concordance_tau(&cases, TiePolicy::Discordant).unwrap();
        assert_eq!((r.concordant, r.discordant, r.tau), (3.0, 1.0, 0.5));
    }

    #[test]
    fn invariant_violation_is_rejected() {
        let mut c = case(true, 1.0, 0.0);
        c.correct_b = true;
        assert!(concordance_tau(&[c], TiePolicy::Discordant).is_err());
    }

    #[test]
    fn classifier_positive_class_is_rand() {
        // truth b, predicted b
        let cases = [case(false, 0.0, 1.0), case(true, 1.0, 0.0)];
        let e = utility_classifier_eval(&cases).unwrap();
        assert_eq!(e.accuracy, 1.0);
        assert_eq!(e.f1, Some(1.0));
        assert_eq!(e.confusion.tp, 1);
        // ties predict a: constant predictions, F1 undefined
        let e = utility_classifier_eval(&[case(false, 0.0, 0.0), case(true, 0.0, 0.0)]).unwrap();
        assert_eq!(e.accuracy, 0.5);
        assert_eq!(e.f1, None);
    }
}
