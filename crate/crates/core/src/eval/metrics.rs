use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::retrieval::RetrievalResult;

/// Lowercase, punctuation removed, whitespace collapsed to single spaces.
pub fn normalize_text(text: &str) -> String {
    let stripped: String = text
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .flat_map(char::to_lowercase)
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when any normalized gold answer occurs in the normalized text.
pub fn contains_answer(text: &str, gold_answers: &[String]) -> bool {
    let hay = normalize_text(text);
    gold_answers.iter().any(|g| {
        let needle = normalize_text(g);
        !needle.is_empty() && contains_words(&hay, &needle)
    })
}

// Substring match aligned to word boundaries, so "one" does not match "someone".
fn contains_words(hay: &str, needle: &str) -> bool {
    let padded = format!(" {hay} ");
    padded.contains(&format!(" {needle} "))
}

/// Binary answer accuracy: a gold answer appears in the prediction.
pub fn answer_correct(prediction: &str, gold_answers: &[String]) -> bool {
    contains_answer(prediction, gold_answers)
}

/// Mean reciprocal rank of the gold document (0 when not retrieved).
pub fn mrr(runs: &[RetrievalResult], gold_doc_ids: &[String]) -> f64 {
    if runs.is_empty() {
        return 0.0;
    }
    let total: f64 = runs
        .iter()
        .zip(gold_doc_ids)
        .map(|(r, g)| r.rank_of(g).map_or(0.0, |k| 1.0 / k as f64))
        .sum();
    total / runs.len() as f64
}

/// Fraction of queries whose gold document is within the top `k`.
pub fn recall_at_k(runs: &[RetrievalResult], gold_doc_ids: &[String], k: usize) -> f64 {
    if runs.is_empty() {
        return 0.0;
    }
    let hits = runs
        .iter()
        .zip(gold_doc_ids)
        .filter(|(r, g)| r.rank_of(g).is_some_and(|rank| rank <= k))
        .count();
    hits as f64 / runs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Overlap {
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

fn overlap_tokens(text: &str) -> Vec<String> {
    normalize_text(text)
        .split(' ')
        .filter(|t| !t.is_empty() && !matches!(*t, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

fn overlap_one(pred: &[String], gold: &[String]) -> Overlap {
    let em = if pred == gold { 1.0 } else { 0.0 };
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return Overlap {
            em,
            ..Default::default()
        };
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    Overlap {
        em,
        f1: 2.0 * precision * recall / (precision + recall),
        precision,
        recall,
    }
}

/// Token overlap against every gold answer, maximised per metric.
pub fn token_overlap(prediction: &str, gold_answers: &[String]) -> Overlap {
    let pred = overlap_tokens(prediction);
    gold_answers
        .iter()
        .map(|g| overlap_one(&pred, &overlap_tokens(g)))
        .fold(Overlap::default(), |a, b| Overlap {
            em: a.em.max(b.em),
            f1: a.f1.max(b.f1),
            precision: a.precision.max(b.precision),
            recall: a.recall.max(b.recall),
        })
}

pub fn mean_overlap(scores: &[Overlap]) -> Overlap {
    if scores.is_empty() {
        return Overlap::default();
    }
    let n = scores.len() as f64;
    let sum = scores.iter().fold(Overlap::default(), |a, b| Overlap {
        em: a.em + b.em,
        f1: a.f1 + b.f1,
        precision: a.precision + b.precision,
        recall: a.recall + b.recall,
    });
    Overlap {
        em: sum.em / n,
        f1: sum.f1 / n,
        precision: sum.precision / n,
        recall: sum.recall / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn golds(g: &[&str]) -> Vec<String> {
        g.iter().map(|s| s.to_string()).collect()
    }

    fn run(ids: &[&str]) -> RetrievalResult {
        RetrievalResult {
            qid: "q".into(),
            ranked: ids.iter().map(|d| (d.to_string(), 1.0)).collect(),
            query_text_used: String::new(),
        }
    }

    #[test]
    fn answer_correctness() {
        let g = golds(&["Edie McCredie"]);
        assert!(answer_correct("Edie McCredie, played by Juliet Cadzow.", &g));
        assert!(!answer_correct("", &g));
        assert!(!answer_correct("the blue house is Mr. Bloom's", &g));
        assert!(!answer_correct("someone", &golds(&["one"])));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("  Mr.  Bloom's\tHOUSE "), "mr bloom s house");
    }

    #[test]
    fn rank_metrics() {
        let runs = [run(&["g"]), run(&["a", "b", "c", "g"]), run(&["a"])];
        let gold = golds(&["g", "g", "g"]);
        assert_abs_diff_eq!(mrr(&runs, &gold), 1.25 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(recall_at_k(&runs, &gold, 1), 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(recall_at_k(&runs, &gold, 10), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn overlap_fixtures() {
        let o = token_overlap("nick hancock", &golds(&["Nick Hancock", "Lee Mack"]));
        assert_eq!((o.f1, o.em), (1.0, 1.0));
        let o = token_overlap("hancock hosted", &golds(&["Nick Hancock"]));
        assert_abs_diff_eq!(o.f1, 0.5, epsilon = 1e-12);
        assert_eq!(token_overlap("", &golds(&["x"])), Overlap::default());
        assert_eq!(token_overlap("The castle", &golds(&["castle"])).em, 1.0);
    }
}
