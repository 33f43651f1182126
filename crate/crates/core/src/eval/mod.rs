//! Property tests for a utility metric, plus the statistics they report.
//!
//! * [`gold`]: does the gold document beat a distractor and a random document?
//! * [`concordance`]: does higher utility go with a correct downstream answer?
//! * [`layout`]: does each model prefer the document order it answers best with?

pub mod concordance;
pub mod gold;
pub mod layout;
pub mod metrics;
pub mod stats;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::retrieval::QueryRecord;

pub use concordance::{
    build_concordance_pairs, concordance_tau, score_concordance, utility_classifier_eval, ClassifierEval,
    ConcordanceCase, ConcordanceConfig, ConcordancePair, ConcordanceReport, GoldPlacement,
};
pub use gold::{build_gold_cases, gold_win_rates, pick_distractor, GoldReport, GoldTestCase};
pub use layout::{build_layout_cases, layout_selection_eval, make_layout_variants, LayoutCase, LayoutReport};
pub use metrics::{
    answer_correct, contains_answer, mean_overlap, mrr, normalize_text, recall_at_k, token_overlap, Overlap,
};
pub use stats::{sign_test, ConcordanceResult, Confusion, SignTestResult, TiePolicy};

/// A case that could not be built or scored, and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub qid: String,
    pub reason: String,
}

impl Skipped {
    pub fn new(qid: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            qid: qid.into(),
            reason: reason.into(),
        }
    }
}

/// Per-query RNG: depends on the run seed, the qid and a purpose tag, never
/// on the order in which queries are processed.
pub fn query_rng(seed: u64, qid: &str, purpose: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(qid.as_bytes());
    h.update([0u8]);
    h.update(purpose.as_bytes());
    let digest = h.finalize();
    let mut s = [0u8; 32];
    s.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(s)
}

/// Retrieval text for a query: prior turns then the question.
pub fn conversational_query(q: &QueryRecord) -> String {
    q.history
        .iter()
        .map(String::as_str)
        .chain(std::iter::once(q.question.as_str()))
        .collect::<Vec<_>>()
        .join(" ")
}
