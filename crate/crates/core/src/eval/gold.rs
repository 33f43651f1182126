//! Gold-document identification.
//!
//! For each query three single-document contexts are scored: the gold
//! document, the highest-ranked retrieved document that does not contain the
//! answer (the distractor), and a uniformly random document. A good metric
//! gives the gold document the highest utility.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::contains_answer;
use super::stats::{sign_test, SignTestResult};
use super::{conversational_query, query_rng, Skipped};
use crate::backend::GroundingContext;
use crate::error::{Error, Result};
use crate::metric::{ConfidenceFormulation, UtilityMode};
use crate::retrieval::{retrieve, Bm25Params, DocumentRecord, InvertedIndex, QueryRecord, RetrievalResult};
use crate::scoring::Scorer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldTestCase {
    pub query: QueryRecord,
    pub gold_doc: DocumentRecord,
    pub distractor_doc: DocumentRecord,
    pub random_doc: DocumentRecord,
}

fn doc_text(d: &DocumentRecord) -> String {
    format!("{} {}", d.title, d.contents)
}

/// Highest-ranked document that is not the gold document and contains none
/// of the gold answers. `None` when every retrieved document does.
pub fn pick_distractor<'a>(
    retrieval: &RetrievalResult,
    index: &'a InvertedIndex,
    gold_answers: &[String],
    gold_doc_id: Option<&str>,
) -> Result<Option<&'a DocumentRecord>> {
    for id in retrieval.doc_ids() {
        if Some(id) == gold_doc_id {
            continue;
        }
        let d = index.document(id)?;
        if !contains_answer(&doc_text(d), gold_answers) {
            return Ok(Some(d));
        }
    }
    Ok(None)
}

/// Builds one case per query that has a gold document and answers.
pub fn build_gold_cases(
    queries: &[QueryRecord],
    index: &InvertedIndex,
    bm25: &Bm25Params,
    top_n: usize,
    seed: u64,
) -> Result<(Vec<GoldTestCase>, Vec<Skipped>)> {
    if index.doc_count() < 2 {
        return Err(Error::Structural("gold tests need at least two documents".into()));
    }
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
        let run = retrieve(index, bm25, &q.qid, &conversational_query(q), top_n);
        let Some(distractor) = pick_distractor(&run, index, &q.gold_answers, Some(gold_id))? else {
            skipped.push(Skipped::new(&q.qid, "every retrieved document contains an answer"));
            continue;
        };
        let mut rng = query_rng(seed, &q.qid, "gold-random");
        let random = loop {
            let d = &index.documents()[rng.gen_range(0..index.doc_count())];
            if d.id != gold.id {
                break d.clone();
            }
        };
        cases.push(GoldTestCase {
            query: q.clone(),
            gold_doc: gold,
            distractor_doc: distractor.clone(),
            random_doc: random,
        });
    }
    Ok((cases, skipped))
}

/// Utilities of one case under one formulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoldCaseRow {
    pub gold: f64,
    pub distractor: f64,
    pub random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldCaseScores {
    pub qid: String,
    /// Parallel to [`GoldReport::formulations`].
    pub rows: Vec<GoldCaseRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRate {
    /// Percentage of scored cases where gold is strictly higher.
    pub rate: f64,
    pub test: SignTestResult,
}

impl WinRate {
    fn tally(cases: usize, outcomes: impl Iterator<Item = std::cmp::Ordering>) -> Self {
        let (mut w, mut l, mut t) = (0, 0, 0);
        for o in outcomes {
            match o {
                std::cmp::Ordering::Greater => w += 1,
                std::cmp::Ordering::Less => l += 1,
                std::cmp::Ordering::Equal => t += 1,
            }
        }
        Self {
            rate: if cases == 0 {
                0.0
            } else {
                100.0 * w as f64 / cases as f64
            },
            test: sign_test(w, l, t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulationWinRates {
    pub formulation: ConfidenceFormulation,
    pub vs_distractor: WinRate,
    pub vs_random: WinRate,
}

/// Per-case comparison of two formulations: a "win" for `a` is a case where
/// `a` ranks gold first and `b` does not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub a: ConfidenceFormulation,
    pub b: ConfidenceFormulation,
    pub vs_distractor: SignTestResult,
    pub vs_random: SignTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldReport {
    pub model_id: String,
    pub mode: UtilityMode,
    pub formulations: Vec<ConfidenceFormulation>,
    pub cases_scored: usize,
    pub win_rates: Vec<FormulationWinRates>,
    pub paired: Vec<PairedComparison>,
    pub skipped: Vec<Skipped>,
    pub per_case: Vec<GoldCaseScores>,
}

impl GoldReport {
    pub fn win_rates_for(&self, f: ConfidenceFormulation) -> Option<&FormulationWinRates> {
        self.win_rates.iter().find(|w| w.formulation == f)
    }
}

fn cmp(a: f64, b: f64) -> std::cmp::Ordering {
    a.partial_cmp(&b).unwrap_or(std::cmp::Ordering::Equal)
}

fn score_case(
    scorer: &Scorer<'_>,
    case: &GoldTestCase,
    formulations: &[ConfidenceFormulation],
) -> Result<GoldCaseScores> {
    let q = &case.query;
    let with_ungrounded = formulations.iter().any(|f| f.uses_key_tokens());
    let bare = match scorer.config().mode {
        UtilityMode::Full => Some(scorer.ungrounded_generation(&q.question, &q.history)?),
        UtilityMode::GroundedOnly => None,
    };
    let mut traces = Vec::with_capacity(3);
    for d in [&case.gold_doc, &case.distractor_doc, &case.random_doc] {
        let ctx = GroundingContext::new(vec![d.clone()]);
        traces.push(scorer.trace_context(&q.question, &q.history, &ctx, with_ungrounded)?);
    }
    let rows = formulations
        .iter()
        .map(|&f| {
            let u = |i: usize| scorer.utility(&traces[i], bare.as_ref(), f).map(|s| s.value);
            Ok(GoldCaseRow {
                gold: u(0)?,
                distractor: u(1)?,
                random: u(2)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GoldCaseScores {
        qid: q.qid.clone(),
        rows,
    })
}

/// Scores every case under each formulation and tallies gold wins.
///
/// All formulations are computed from the same traces, so they are compared
/// on identical generations. A backend failure skips the case.
pub fn gold_win_rates(
    cases: &[GoldTestCase],
    formulations: &[ConfidenceFormulation],
    scorer: &Scorer<'_>,
) -> Result<GoldReport> {
    if cases.is_empty() {
        return Err(Error::Structural("no gold test cases".into()));
    }
    if formulations.is_empty() {
        return Err(Error::Config("no formulations requested".into()));
    }
    let results: Vec<Result<GoldCaseScores>> = cases.par_iter().map(|c| score_case(scorer, c, formulations)).collect();
    let mut per_case = Vec::new();
    let mut skipped = Vec::new();
    for (c, r) in cases.iter().zip(results) {
        match r {
            Ok(s) => per_case.push(s),
            Err(e) if e.class() == crate::ErrorClass::Backend => {
                log::warn!("gold case {} skipped: {e}", c.query.qid);
                skipped.push(Skipped::new(&c.query.qid, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    let n = per_case.len();
    let win_rates = formulations
        .iter()
        .enumerate()
        .map(|(k, &f)| FormulationWinRates {
            formulation: f,
            vs_distractor: WinRate::tally(n, per_case.iter().map(|c| cmp(c.rows[k].gold, c.rows[k].distractor))),
            vs_random: WinRate::tally(n, per_case.iter().map(|c| cmp(c.rows[k].gold, c.rows[k].random))),
        })
        .collect();
    let pos = |f| formulations.iter().position(|&x| x == f);
    let mut paired = Vec::new();
    for (a, b) in [
        (ConfidenceFormulation::KeyEntropy, ConfidenceFormulation::Entropy),
        (ConfidenceFormulation::KeyPpl, ConfidenceFormulation::Ppl),
    ] {
        let (Some(ia), Some(ib)) = (pos(a), pos(b)) else {
            continue;
        };
        let paired_test = |other: fn(&GoldCaseRow) -> f64| {
            let (mut w, mut l, mut t) = (0, 0, 0);
            for c in &per_case {
                let wa = c.rows[ia].gold > other(&c.rows[ia]);
                let wb = c.rows[ib].gold > other(&c.rows[ib]);
                match (wa, wb) {
                    (true, false) => w += 1,
                    (false, true) => l += 1,
                    _ => t += 1,
                }
            }
            sign_test(w, l, t)
        };
        paired.push(PairedComparison {
            a,
            b,
            vs_distractor: paired_test(|r| r.distractor),
            vs_random: paired_test(|r| r.random),
        });
    }
    Ok(GoldReport {
        model_id: scorer.model().model_id().to_string(),
        mode: scorer.config().mode,
        formulations: formulations.to_vec(),
        cases_scored: n,
        win_rates,
        paired,
        skipped,
        per_case,
    })
}
