//! Plain-text and CSV renderings of reports.

use std::fmt::Write as _;

use grogu::eval::{ConcordanceReport, GoldReport, LayoutReport, SignTestResult};
use grogu::Result;
use serde::{Deserialize, Serialize};

use crate::commands::{PrefsSummary, ScoreRow, SweepReport};

/// What `report.json` holds; `grogu report` re-renders from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "report", rename_all = "snake_case")]
pub enum ReportFile {
    Gold(GoldReport),
    Concordance(ConcordanceReport),
    Layout(LayoutReport),
    Prefs(PrefsSummary),
    Score(Vec<ScoreRow>),
    Sweep(SweepReport),
}

fn p(t: &SignTestResult) -> String {
    format!("{}/{}/{} p={:.3e}", t.wins, t.losses, t.ties, t.p_two_sided)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| grogu::Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.into_inner().map_err(|e| grogu::Error::Io(e.into_error()))
}

fn f(x: f64) -> String {
    format!("{x}")
}

impl ReportFile {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        match self {
            ReportFile::Gold(r) => {
                let _ = writeln!(s, "gold identification: model {} mode {:?}", r.model_id, r.mode);
                let _ = writeln!(s, "cases scored {}, skipped {}", r.cases_scored, r.skipped.len());
                let _ = writeln!(
                    s,
                    "{:<12} {:>10} {:>10}   sign tests (w/l/t)",
                    "metric", "vs dist", "vs rand"
                );
                for w in &r.win_rates {
                    let _ = writeln!(
                        s,
                        "{:<12} {:>9.1}% {:>9.1}%   {} | {}",
                        w.formulation.name(),
                        w.vs_distractor.rate,
                        w.vs_random.rate,
                        p(&w.vs_distractor.test),
                        p(&w.vs_random.test)
                    );
                }
                for c in &r.paired {
                    let _ = writeln!(
                        s,
                        "{} vs {}: dist {} | rand {}",
                        c.a.name(),
                        c.b.name(),
                        p(&c.vs_distractor),
                        p(&c.vs_random)
                    );
                }
            }
            ReportFile::Concordance(r) => {
                let _ = writeln!(
                    s,
                    "concordance: model {} mode {:?} ties {:?}",
                    r.model_id, r.mode, r.ties
                );
                let _ = writeln!(
                    s,
                    "pairs {}, both correct {}, neither correct {}, skipped {}",
                    r.pairs,
                    r.both_correct,
                    r.neither_correct,
                    r.skipped.len()
                );
                let _ = writeln!(
                    s,
                    "{:<12} {:>8} {:>6} {:>6} {:>8} {:>8} {:>8}",
                    "metric", "tau", "C", "D", "acc", "f1", "macroF1"
                );
                for row in &r.rows {
                    let _ = writeln!(
                        s,
                        "{:<12} {:>8} {:>6} {:>6} {:>8} {:>8} {:>8}",
                        row.metric,
                        format!("{:.3}", row.result.tau),
                        row.result.concordant,
                        row.result.discordant,
                        format!("{:.3}", row.classifier.accuracy),
                        opt(row.classifier.f1),
                        opt(row.classifier.macro_f1)
                    );
                }
            }
            ReportFile::Layout(r) => {
                let _ = writeln!(
                    s,
                    "layout selection: {} cases, metric {}",
                    r.cases_scored,
                    r.formulation.name()
                );
                let _ = writeln!(
                    s,
                    "{:<16} {:>7} {:>7} {:>7}  picks(1/5/10)",
                    "model", "own", "other", "random"
                );
                for m in [&r.model_i, &r.model_j] {
                    let _ = writeln!(
                        s,
                        "{:<16} {:>6.1}% {:>6.1}% {:>6.1}%  {:?}  own-vs-other {} own-vs-random {}",
                        m.model_id,
                        m.own,
                        m.other,
                        m.random,
                        m.picks,
                        p(&m.own_vs_other),
                        p(&m.own_vs_random)
                    );
                }
            }
            ReportFile::Prefs(r) => {
                let _ = writeln!(
                    s,
                    "preference data: {} questions, {} rewrites scored, {} SFT records",
                    r.questions, r.rewrites_scored, r.sft_records
                );
                let _ = writeln!(
                    s,
                    "DPO pairs {} (zero gap dropped {}), kept {} at fraction {}",
                    r.dpo_pairs, r.zero_gap, r.dpo_kept, r.keep_fraction
                );
                let _ = writeln!(
                    s,
                    "cache entries at start {}, skipped {}",
                    r.cache_entries_before,
                    r.skipped.len()
                );
            }
            ReportFile::Score(rows) => {
                let _ = writeln!(s, "scored {} queries", rows.len());
                let mean = rows.iter().map(|r| r.utility).sum::<f64>() / rows.len().max(1) as f64;
                let _ = writeln!(s, "mean utility {mean:.6}");
            }
            ReportFile::Sweep(r) => {
                let _ = writeln!(s, "sweep over {} settings, objective {}", r.points.len(), r.objective);
                if let Some(b) = r.best() {
                    let _ = writeln!(s, "best alpha {} top_k_frac {}: {:.2}", b.alpha, b.top_k_frac, b.score);
                }
            }
        }
        s
    }

    pub fn per_case_csv(&self) -> Result<Vec<u8>> {
        match self {
            ReportFile::Gold(r) => {
                let mut header = vec!["qid".to_string()];
                for f in &r.formulations {
                    for c in ["gold", "distractor", "random"] {
                        header.push(format!("{}_{c}", f.name()));
                    }
                }
                let h: Vec<&str> = header.iter().map(String::as_str).collect();
                csv_bytes(
                    &h,
                    r.per_case.iter().map(|c| {
                        let mut row = vec![c.qid.clone()];
                        for x in &c.rows {
                            row.extend([f(x.gold), f(x.distractor), f(x.random)]);
                        }
                        row
                    }),
                )
            }
            ReportFile::Concordance(r) => {
                let mut header: Vec<String> = ["qid", "correct_a", "correct_b", "relevance_a", "relevance_b"]
                    .map(String::from)
                    .to_vec();
                for fm in &r.formulations {
                    header.push(format!("{}_a", fm.name()));
                    header.push(format!("{}_b", fm.name()));
                }
                let h: Vec<&str> = header.iter().map(String::as_str).collect();
                csv_bytes(
                    &h,
                    r.per_case.iter().map(|c| {
                        let mut row = vec![
                            c.qid.clone(),
                            c.correct_a.to_string(),
                            c.correct_b.to_string(),
                            f(c.relevance_a),
                            f(c.relevance_b),
                        ];
                        for (a, b) in c.utility_a.iter().zip(&c.utility_b) {
                            row.extend([f(*a), f(*b)]);
                        }
                        row
                    }),
                )
            }
            ReportFile::Layout(r) => csv_bytes(
                &["qid", "random_pick", "i_pick", "j_pick", "i_correct", "j_correct"],
                r.per_case.iter().map(|c| {
                    let bits = |v: &[bool]| v.iter().map(|b| if *b { '1' } else { '0' }).collect::<String>();
                    vec![
                        c.qid.clone(),
                        c.random_pick.to_string(),
                        c.i.selected().to_string(),
                        c.j.selected().to_string(),
                        bits(&c.i.correct),
                        bits(&c.j.correct),
                    ]
                }),
            ),
            ReportFile::Prefs(r) => csv_bytes(
                &["qid", "rewrite", "utility"],
                r.scores.iter().flat_map(|q| {
                    q.scores
                        .iter()
                        .map(move |(rw, u)| vec![q.qid.clone(), rw.clone(), f(*u)])
                }),
            ),
            ReportFile::Score(rows) => csv_bytes(
                &["qid", "utility", "doc_ids"],
                rows.iter()
                    .map(|r| vec![r.qid.clone(), f(r.utility), r.doc_ids.join(" ")]),
            ),
            ReportFile::Sweep(r) => csv_bytes(
                &["alpha", "top_k_frac", "score"],
                r.points.iter().map(|p| vec![f(p.alpha), f(p.top_k_frac), f(p.score)]),
            ),
        }
    }
}
