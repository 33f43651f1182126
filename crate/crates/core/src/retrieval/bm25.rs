use serde::{Deserialize, Serialize};

use super::index::InvertedIndex;
use crate::error::{Error, Result};

/// Okapi BM25 saturation `k1` and length normalization `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if self.k1.is_nan() || self.k1 <= 0.0 || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!(
                "invalid BM25 parameters k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub qid: String,
    pub ranked: Vec<(String, f64)>,
    pub query_text_used: String,
}

impl RetrievalResult {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|(id, _)| id.as_str())
    }

    /// 1-based rank of `doc_id`, if retrieved.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids().position(|d| d == doc_id).map(|p| p + 1)
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let (n, df) = (doc_count as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

fn term_weight(params: &Bm25Params, idf: f64, tf: u32, len: u32, avg: f64) -> f64 {
    let tf = tf as f64;
    idf * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * len as f64 / avg))
}

pub fn bm25_score(index: &InvertedIndex, params: &Bm25Params, query_terms: &[String], doc_id: &str) -> Result<f64> {
    let ord = index.ordinal(doc_id)?;
    let len = index.length_by_ordinal(ord);
    let mut score = 0.0;
    for term in query_terms {
        let tf = index.tf_by_ordinal(term, ord);
        if tf > 0 {
            let w = idf(index.doc_count(), index.doc_freq(term));
            score += term_weight(params, w, tf, len, index.avg_doc_length());
        }
    }
    Ok(score)
}

/// Top `top_n` documents for `query_text`, ties broken by ascending doc id.
pub fn retrieve(
    index: &InvertedIndex,
    params: &Bm25Params,
    qid: &str,
    query_text: &str,
    top_n: usize,
) -> RetrievalResult {
    let terms = index.tokenizer().tokenize(query_text);
    let mut acc = vec![0.0f64; index.doc_count()];
    let mut hit = vec![false; index.doc_count()];
    for term in &terms {
        let postings = index.postings(term);
        if postings.is_empty() {
            continue;
        }
        let w = idf(index.doc_count(), postings.len());
        for &(ord, tf) in postings {
            acc[ord as usize] += term_weight(params, w, tf, index.length_by_ordinal(ord), index.avg_doc_length());
            hit[ord as usize] = true;
        }
    }
    let mut ranked: Vec<(String, f64)> = hit
        .iter()
        .enumerate()
        .filter(|(_, h)| **h)
        .map(|(o, _)| (index.doc_by_ordinal(o as u32).id.clone(), acc[o]))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_n);
    RetrievalResult {
        qid: qid.to_string(),
        ranked,
        query_text_used: query_text.to_string(),
    }
}
