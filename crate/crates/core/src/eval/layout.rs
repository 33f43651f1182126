//! Model-specific context selection.
//!
//! The same ten documents are laid out three ways, with the gold document
//! first, fifth or last. Each model picks the layout it scores highest; then
//! both models answer under their own picks, the other model's picks and a
//! seeded random pick. A model-specific metric should make each model do at
//! least as well with its own picks.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::answer_correct;
use super::stats::{sign_test, SignTestResult};
use super::{conversational_query, query_rng, Skipped};
use crate::backend::GroundingContext;
use crate::error::{Error, Result};
use crate::metric::{ConfidenceFormulation, UtilityMode};
use crate::retrieval::{retrieve, Bm25Params, DocumentRecord, InvertedIndex, QueryRecord};
use crate::scoring::Scorer;

/// 0-based gold positions of the three layouts.
pub const GOLD_POSITIONS: [usize; 3] = [0, 4, 9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutCase {
    pub query: QueryRecord,
    /// Gold document first, then the nine others in their given order.
    pub docs: Vec<DocumentRecord>,
    pub variants: Vec<GroundingContext>,
}

pub fn make_layout_variants(query: QueryRecord, gold: DocumentRecord, nine: Vec<DocumentRecord>) -> Result<LayoutCase> {
    if nine.len() != 9 {
        return Err(Error::Structural(format!(
            "layout needs exactly 9 non-gold documents, got {}",
            nine.len()
        )));
    }
    let variants = GOLD_POSITIONS
        .iter()
        .map(|&p| {
            let mut docs = nine.clone();
            docs.insert(p, gold.clone());
            GroundingContext::new(docs)
        })
        .collect();
    let mut docs = vec![gold];
    docs.extend(nine);
    Ok(LayoutCase { query, docs, variants })
}

/// Gold plus its nine best-ranked non-gold neighbours, per query.
pub fn build_layout_cases(
    queries: &[QueryRecord],
    index: &InvertedIndex,
    bm25: &Bm25Params,
) -> Result<(Vec<LayoutCase>, Vec<Skipped>)> {
    let mut cases = Vec::new();
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
        let run = retrieve(index, bm25, &q.qid, &conversational_query(q), 10);
        let nine: Vec<_> = run
            .doc_ids()
            .filter(|&d| d != gold_id)
            .take(9)
            .map(|d| index.document(d).cloned())
            .collect::<Result<_>>()?;
        if nine.len() < 9 {
            skipped.push(Skipped::new(&q.qid, "fewer than nine retrieved documents"));
            continue;
        }
        cases.push(make_layout_variants(q.clone(), gold, nine)?);
    }
    Ok((cases, skipped))
}

/// Per-variant answer correctness and utility for one model and one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantScores {
    pub correct: Vec<bool>,
    pub utility: Vec<f64>,
}

impl VariantScores {
    /// Highest-utility variant; ties go to the lowest gold position.
    pub fn selected(&self) -> usize {
        let mut best = 0;
        for (i, &u) in self.utility.iter().enumerate().skip(1) {
            if u > self.utility[best] {
                best = i;
            }
        }
        best
    }
}

fn score_case(scorer: &Scorer<'_>, case: &LayoutCase, f: ConfidenceFormulation) -> Result<VariantScores> {
    let q = &case.query;
    let bare = match scorer.config().mode {
        UtilityMode::Full => Some(scorer.ungrounded_generation(&q.question, &q.history)?),
        UtilityMode::GroundedOnly => None,
    };
    let mut correct = Vec::with_capacity(case.variants.len());
    let mut utility = Vec::with_capacity(case.variants.len());
    for v in &case.variants {
        let t = scorer.trace_context(&q.question, &q.history, v, f.uses_key_tokens())?;
        correct.push(answer_correct(&t.answer, &q.gold_answers));
        utility.push(scorer.utility(&t, bare.as_ref(), f)?.value);
    }
    Ok(VariantScores { correct, utility })
}

/// Accuracies of one model under each selection, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model_id: String,
    pub own: f64,
    pub other: f64,
    pub random: f64,
    /// Case-level own vs other: wins are cases answered correctly only under own picks.
    pub own_vs_other: SignTestResult,
    pub own_vs_random: SignTestResult,
    /// How often the model picked gold at position 1, 5 and 10.
    pub picks: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutCaseRow {
    pub qid: String,
    pub random_pick: usize,
    pub i: VariantScores,
    pub j: VariantScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutReport {
    pub formulation: ConfidenceFormulation,
    pub cases_scored: usize,
    pub model_i: ModelRow,
    pub model_j: ModelRow,
    pub skipped: Vec<Skipped>,
    pub per_case: Vec<LayoutCaseRow>,
}

fn percent(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * hits as f64 / n as f64
    }
}

fn paired(a: &[bool], b: &[bool]) -> SignTestResult {
    let w = a.iter().zip(b).filter(|(x, y)| **x && !**y).count();
    let l = a.iter().zip(b).filter(|(x, y)| !**x && **y).count();
    sign_test(w, l, a.len() - w - l)
}

fn model_row(model_id: &str, scores: &[&VariantScores], own: &[usize], other: &[usize], random: &[usize]) -> ModelRow {
    let under = |sel: &[usize]| -> Vec<bool> { scores.iter().zip(sel).map(|(s, &k)| s.correct[k]).collect() };
    let (o, x, r) = (under(own), under(other), under(random));
    let n = scores.len();
    let mut picks = [0usize; 3];
    for &k in own {
        picks[k.min(2)] += 1;
    }
    ModelRow {
        model_id: model_id.to_string(),
        own: percent(o.iter().filter(|c| **c).count(), n),
        other: percent(x.iter().filter(|c| **c).count(), n),
        random: percent(r.iter().filter(|c| **c).count(), n),
        own_vs_other: paired(&o, &x),
        own_vs_random: paired(&o, &r),
        picks,
    }
}

/// Runs the cross-model selection experiment for two scorers.
pub fn layout_selection_eval(
    scorer_i: &Scorer<'_>,
    scorer_j: &Scorer<'_>,
    cases: &[LayoutCase],
    formulation: ConfidenceFormulation,
    seed: u64,
) -> Result<LayoutReport> {
    if cases.is_empty() {
        return Err(Error::Structural("no layout cases".into()));
    }
    let results: Vec<Result<(VariantScores, VariantScores)>> = cases
        .par_iter()
        .map(|c| {
            Ok((
                score_case(scorer_i, c, formulation)?,
                score_case(scorer_j, c, formulation)?,
            ))
        })
        .collect();
    let mut skipped = Vec::new();
    let mut per_case = Vec::new();
    for (c, r) in cases.iter().zip(results) {
        match r {
            Ok((i, j)) => per_case.push(LayoutCaseRow {
                qid: c.query.qid.clone(),
                random_pick: query_rng(seed, &c.query.qid, "layout-random").gen_range(0..c.variants.len()),
                i,
                j,
            }),
            Err(e) if e.class() == crate::ErrorClass::Backend => {
                log::warn!("layout case {} skipped: {e}", c.query.qid);
                skipped.push(Skipped::new(&c.query.qid, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    let sel_i: Vec<usize> = per_case.iter().map(|c| c.i.selected()).collect();
    let sel_j: Vec<usize> = per_case.iter().map(|c| c.j.selected()).collect();
    let rand: Vec<usize> = per_case.iter().map(|c| c.random_pick).collect();
    let si: Vec<&VariantScores> = per_case.iter().map(|c| &c.i).collect();
    let sj: Vec<&VariantScores> = per_case.iter().map(|c| &c.j).collect();
    Ok(LayoutReport {
        formulation,
        cases_scored: per_case.len(),
        model_i: model_row(scorer_i.model().model_id(), &si, &sel_i, &sel_j, &rand),
        model_j: model_row(scorer_j.model().model_id(), &sj, &sel_j, &sel_i, &rand),
        skipped,
        per_case,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(n: usize) -> Vec<DocumentRecord> {
        (0..n).map(|i| DocumentRecord::new(format!("d{i}"), "", "x")).collect()
    }

    fn query() -> QueryRecord {
        QueryRecord {
            qid: "q".into(),
            question: "?".into(),
            history: vec![],
            gold_answers: vec!["x".into()],
            gold_doc_id: Some("g".into()),
        }
    }

    #[test]
    fn variants_are_permutations() {
        let g = DocumentRecord::new("g", "", "gold");
        let c = make_layout_variants(query(), g, docs(9)).unwrap();
        let mut reference: Vec<String> = c.docs.iter().map(|d| d.id.clone()).collect();
        reference.sort();
        for (v, &p) in c.variants.iter().zip(&GOLD_POSITIONS) {
            let ids = v.doc_ids();
            assert_eq!(ids[p], "g");
            let others: Vec<_> = ids.iter().filter(|i| *i != "g").cloned().collect();
            assert_eq!(others, (0..9).map(|i| format!("d{i}")).collect::<Vec<_>>());
            let mut sorted = ids.clone();
            sorted.sort();
            assert_eq!(sorted, reference);
        }
    }

    #[test]
    fn wrong_count_is_structural() {
        let g = DocumentRecord::new("g", "", "gold");
        assert!(matches!(
            make_layout_variants(query(), g, docs(8)),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn ties_select_lowest_position() {
        let s = VariantScores {
            correct: vec![true; 3],
            utility: vec![-1.0, 0.0, 0.0],
        };
        assert_eq!(s.selected(), 1);
        let s = VariantScores {
            correct: vec![true; 3],
            utility: vec![0.0; 3],
        };
        assert_eq!(s.selected(), 0);
    }
}
