//! Subcommand bodies. Each reads its inputs from disk and writes into the run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use grogu::backend::{GroundingContext, ModelRef};
use grogu::eval::{
    build_concordance_pairs, build_gold_cases, build_layout_cases, conversational_query, gold_win_rates,
    layout_selection_eval, score_concordance, ConcordanceConfig, Skipped,
};
use grogu::io::{sha256_file, write_atomic, write_jsonl};
use grogu::metric::{ConfidenceFormulation, KeyTokenConfig, UtilityMode};
use grogu::prefdata::{
    build_dpo_pairs, build_sft_records, emit_jsonl, filter_by_gap, read_rewrite_sets, score_rewrite_sets, PrefConfig,
    QidScores, ScoreCache,
};
use grogu::retrieval::{read_corpus, read_queries, retrieve, InvertedIndex, QueryRecord};
use grogu::scoring::Scorer;
use grogu::synth::{needle_world, NeedleWorldConfig};
use grogu::{Error, ErrorClass, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::render::ReportFile;

/// Resolved configuration plus the directory this run writes into.
pub struct Run {
    pub cfg: PipelineConfig,
    pub dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool_version: &'static str,
    command: &'a serde_json::Value,
    model: ModelRef,
    config: &'a PipelineConfig,
    /// sha256 of every input file that exists.
    inputs: BTreeMap<String, String>,
}

impl Run {
    /// Creates the run directory and writes the manifest.
    pub fn start(cfg: PipelineConfig, command: &serde_json::Value, name: Option<String>) -> Result<Self> {
        cfg.validate()?;
        let mut inputs = BTreeMap::new();
        let p = &cfg.paths;
        for path in [&p.corpus, &p.queries, &p.rewrites, &p.traces, &p.index]
            .into_iter()
            .flatten()
        {
            if path.exists() {
                inputs.insert(path.display().to_string(), sha256_file(path)?);
            }
        }
        let name = match name {
            Some(n) => n,
            None => format!("{}-{}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"), cfg.hash()?),
        };
        let dir = p.out.join(name);
        std::fs::create_dir_all(&dir)?;
        let manifest = Manifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            command,
            model: cfg.model.model_ref(),
            config: &cfg,
            inputs,
        };
        write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
        Ok(Self { cfg, dir })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn queries(&self) -> Result<Vec<QueryRecord>> {
        read_queries(self.cfg.require(&self.cfg.paths.queries, "queries")?)
    }

    /// Loads the index file when one is given, otherwise indexes the corpus.
    fn index(&self) -> Result<InvertedIndex> {
        if let Some(path) = &self.cfg.paths.index {
            let index = InvertedIndex::load(path)?;
            if index.tokenizer() != self.cfg.tokenizer {
                log::warn!("index was built with tokenizer {:?}; using it", index.tokenizer());
            }
            return Ok(index);
        }
        let corpus = read_corpus(self.cfg.require(&self.cfg.paths.corpus, "corpus")?)?;
        InvertedIndex::build(corpus, self.cfg.tokenizer)
    }

    fn write_report(&self, report: &ReportFile) -> Result<()> {
        write_report(&self.dir, report)
    }
}

pub fn write_report(dir: &Path, report: &ReportFile) -> Result<()> {
    write_atomic(&dir.join("report.json"), &serde_json::to_vec_pretty(report)?)?;
    write_atomic(&dir.join("per_case.csv"), &report.per_case_csv()?)?;
    write_atomic(&dir.join("summary.txt"), report.summary().as_bytes())
}

pub fn index(run: &Run) -> Result<()> {
    let corpus = read_corpus(run.cfg.require(&run.cfg.paths.corpus, "corpus")?)?;
    let index = InvertedIndex::build(corpus, run.cfg.tokenizer)?;
    index.save(&run.out("index.bin"))?;
    println!(
        "indexed {} documents into {}",
        index.doc_count(),
        run.out("index.bin").display()
    );
    Ok(())
}

pub fn retrieve_cmd(run: &Run, query: Option<&str>) -> Result<()> {
    let index = run.index()?;
    let results = match query {
        Some(text) => vec![retrieve(&index, &run.cfg.bm25, "query", text, run.cfg.top_n)],
        None => run
            .queries()?
            .iter()
            .map(|q| retrieve(&index, &run.cfg.bm25, &q.qid, &conversational_query(q), run.cfg.top_n))
            .collect(),
    };
    write_jsonl(&run.out("retrieval.jsonl"), &results)?;
    if query.is_some() {
        for (rank, (id, score)) in results[0].ranked.iter().enumerate() {
            println!("{:>3} {id} {score:.6}", rank + 1);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub qid: String,
    pub doc_ids: Vec<String>,
    pub formulation: ConfidenceFormulation,
    pub utility: f64,
    pub answer: String,
}

fn skip_backend<T>(qid: &str, r: Result<T>, skipped: &mut Vec<Skipped>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.class() == ErrorClass::Backend => {
            log::warn!("{qid} skipped: {e}");
            skipped.push(Skipped::new(qid, e.to_string()));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// A run where the backend failed on every case is a backend failure, not an empty report.
fn ensure_scored(scored: usize, skipped: &[Skipped]) -> Result<()> {
    match skipped.first() {
        Some(first) if scored == 0 => Err(Error::Backend(format!(
            "no case could be scored; first failure ({}): {}",
            first.qid, first.reason
        ))),
        _ => Ok(()),
    }
}

pub fn score(run: &Run) -> Result<()> {
    let index = run.index()?;
    let queries = run.queries()?;
    let model = run.cfg.open_model(&run.cfg.model)?;
    let scoring = run.cfg.scoring(&run.cfg.model);
    let scorer = Scorer::new(model.as_ref(), &scoring);
    let f = run.cfg.formulation;
    let results: Vec<Result<ScoreRow>> = queries
        .par_iter()
        .map(|q| {
            let r = retrieve(&index, &run.cfg.bm25, &q.qid, &conversational_query(q), run.cfg.top_n);
            let doc_ids: Vec<String> = r.doc_ids().map(str::to_string).collect();
            let docs = doc_ids
                .iter()
                .map(|d| index.document(d).cloned())
                .collect::<Result<Vec<_>>>()?;
            let (u, t) = scorer.score(&q.question, &q.history, &GroundingContext::new(docs), f)?;
            Ok(ScoreRow {
                qid: q.qid.clone(),
                doc_ids,
                formulation: f,
                utility: u.value,
                answer: t.answer,
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (q, r) in queries.iter().zip(results) {
        rows.extend(skip_backend(&q.qid, r, &mut skipped)?);
    }
    ensure_scored(rows.len(), &skipped)?;
    if !skipped.is_empty() {
        write_jsonl(&run.out("skipped.jsonl"), &skipped)?;
    }
    write_jsonl(&run.out("scores.jsonl"), &rows)?;
    run.write_report(&ReportFile::Score(rows))
}

pub fn eval_gold(run: &Run) -> Result<()> {
    let index = run.index()?;
    let (cases, mut skipped) = build_gold_cases(&run.queries()?, &index, &run.cfg.bm25, run.cfg.top_n, run.cfg.seed)?;
    let model = run.cfg.open_model(&run.cfg.model)?;
    let scoring = run.cfg.scoring(&run.cfg.model);
    let mut report = gold_win_rates(
        &cases,
        &ConfidenceFormulation::ALL,
        &Scorer::new(model.as_ref(), &scoring),
    )?;
    ensure_scored(report.cases_scored, &report.skipped)?;
    skipped.append(&mut report.skipped);
    report.skipped = skipped;
    let report = ReportFile::Gold(report);
    print!("{}", report.summary());
    run.write_report(&report)
}

pub fn eval_concordance(run: &Run) -> Result<()> {
    let index = run.index()?;
    let cc = ConcordanceConfig {
        padding: run.cfg.concordance_padding,
        gold_placement: run.cfg.gold_placement,
        ties: run.cfg.ties,
    };
    let (pairs, mut skipped) = build_concordance_pairs(&run.queries()?, &index, &run.cfg.bm25, &cc, run.cfg.seed)?;
    let model = run.cfg.open_model(&run.cfg.model)?;
    let scoring = run.cfg.scoring(&run.cfg.model);
    let scorer = Scorer::new(model.as_ref(), &scoring);
    let mut report = score_concordance(
        &pairs,
        &ConfidenceFormulation::ALL,
        &scorer,
        &index,
        &run.cfg.bm25,
        cc.ties,
    )?;
    ensure_scored(report.pairs - report.skipped.len(), &report.skipped)?;
    skipped.append(&mut report.skipped);
    report.skipped = skipped;
    let report = ReportFile::Concordance(report);
    print!("{}", report.summary());
    run.write_report(&report)
}

pub fn eval_layout(run: &Run) -> Result<()> {
    let index = run.index()?;
    let (cases, mut skipped) = build_layout_cases(&run.queries()?, &index, &run.cfg.bm25)?;
    let (mi, mj) = (
        run.cfg.open_model(&run.cfg.model)?,
        run.cfg.open_model(&run.cfg.model_j)?,
    );
    let (si, sj) = (run.cfg.scoring(&run.cfg.model), run.cfg.scoring(&run.cfg.model_j));
    let mut report = layout_selection_eval(
        &Scorer::new(mi.as_ref(), &si),
        &Scorer::new(mj.as_ref(), &sj),
        &cases,
        run.cfg.formulation,
        run.cfg.seed,
    )?;
    ensure_scored(report.cases_scored, &report.skipped)?;
    skipped.append(&mut report.skipped);
    report.skipped = skipped;
    let report = ReportFile::Layout(report);
    print!("{}", report.summary());
    run.write_report(&report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefsSummary {
    pub questions: usize,
    pub rewrites_scored: usize,
    pub sft_records: usize,
    pub dpo_pairs: usize,
    /// Questions dropped because every rewrite scored the same.
    pub zero_gap: usize,
    pub dpo_kept: usize,
    pub keep_fraction: f64,
    pub cache_entries_before: usize,
    pub skipped: Vec<Skipped>,
    pub scores: Vec<QidScores>,
}

pub fn build_prefs(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let index = run.index()?;
    let sets = read_rewrite_sets(cfg.require(&cfg.paths.rewrites, "rewrites")?)?;
    let model = cfg.open_model(&cfg.model)?;
    let scoring = cfg.scoring(&cfg.model);
    let scorer = Scorer::new(model.as_ref(), &scoring);
    let pc = PrefConfig {
        formulation: cfg.formulation,
        top_n: cfg.top_n,
        keep_fraction: cfg.keep_fraction,
        question_slot: cfg.question_slot,
    };
    let cache = cfg.paths.score_cache.as_deref().map(ScoreCache::open).transpose()?;
    let cache_entries_before = cache.as_ref().map_or(0, ScoreCache::len);
    let (scores, all, mut skipped) = score_rewrite_sets(&sets, &index, &cfg.bm25, &scorer, &pc, cache.as_ref())?;
    ensure_scored(all.len(), &skipped)?;
    let (sft, mut s1) = build_sft_records(&scores);
    let (pairs, mut s2) = build_dpo_pairs(&scores);
    let zero_gap = s2.iter().filter(|s| s.reason == "all rewrites score the same").count();
    let kept = filter_by_gap(&pairs, cfg.keep_fraction);
    emit_jsonl(&sft, &run.out("sft.jsonl"))?;
    emit_jsonl(&pairs, &run.out("dpo_all.jsonl"))?;
    emit_jsonl(&kept, &run.out("dpo.jsonl"))?;
    skipped.append(&mut s1);
    skipped.append(&mut s2);
    let report = ReportFile::Prefs(PrefsSummary {
        questions: sets.len(),
        rewrites_scored: all.len(),
        sft_records: sft.len(),
        dpo_pairs: pairs.len(),
        zero_gap,
        dpo_kept: kept.len(),
        keep_fraction: cfg.keep_fraction,
        cache_entries_before,
        skipped,
        scores,
    });
    print!("{}", report.summary());
    run.write_report(&report)
}

/// Re-renders the summaries of an earlier run from its `report.json`.
pub fn report(dir: &Path) -> Result<()> {
    let path = dir.join("report.json");
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    let report: ReportFile = serde_json::from_slice(&std::fs::read(&path)?)?;
    write_atomic(&dir.join("per_case.csv"), &report.per_case_csv()?)?;
    write_atomic(&dir.join("summary.txt"), report.summary().as_bytes())?;
    print!("{}", report.summary());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub top_k_frac: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub objective: String,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// Highest score; ties keep the earliest grid point.
    pub fn best(&self) -> Option<&SweepPoint> {
        self.points
            .iter()
            .fold(None, |best: Option<&SweepPoint>, p| match best {
                Some(b) if b.score >= p.score => Some(b),
                _ => Some(p),
            })
    }
}

/// The α and K grids: α from 0 to 0.5 and K from 0.1 to 1 in steps of 0.05 and 0.1.
pub fn sweep_grid() -> (Vec<f64>, Vec<f64>) {
    let alphas = (0..=10).map(|i| i as f64 * 0.05).collect();
    let ks = (1..=10).map(|i| i as f64 * 0.1).collect();
    (alphas, ks)
}

/// Grid search over key-token settings on the gold suite. Each case is
/// traced once; only the utilities are recomputed per grid point.
pub fn sweep(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let index = run.index()?;
    let (cases, _) = build_gold_cases(&run.queries()?, &index, &cfg.bm25, cfg.top_n, cfg.seed)?;
    let model = cfg.open_model(&cfg.model)?;
    let base = cfg.scoring(&cfg.model);
    let scorer = Scorer::new(model.as_ref(), &base);
    let f = cfg.formulation;
    let traced: Vec<Result<_>> = cases
        .par_iter()
        .map(|c| {
            let q = &c.query;
            let bare = match base.mode {
                UtilityMode::Full => Some(scorer.ungrounded_generation(&q.question, &q.history)?),
                UtilityMode::GroundedOnly => None,
            };
            let traces = [&c.gold_doc, &c.distractor_doc, &c.random_doc]
                .into_iter()
                .map(|d| {
                    let ctx = GroundingContext::new(vec![d.clone()]);
                    scorer.trace_context(&q.question, &q.history, &ctx, f.uses_key_tokens())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((bare, traces))
        })
        .collect();
    let mut skipped = Vec::new();
    let mut traced_ok = Vec::new();
    for (c, r) in cases.iter().zip(traced) {
        traced_ok.extend(skip_backend(&c.query.qid, r, &mut skipped)?);
    }
    ensure_scored(traced_ok.len(), &skipped)?;
    if traced_ok.is_empty() {
        return Err(Error::Structural("no gold test cases".into()));
    }
    let n = traced_ok.len() as f64;
    let (alphas, ks) = sweep_grid();
    let mut points = Vec::new();
    for &alpha in &alphas {
        for &top_k_frac in &ks {
            let mut scoring = base.clone();
            scoring.key_tokens = KeyTokenConfig::new(alpha, top_k_frac)?;
            let s = Scorer::new(model.as_ref(), &scoring);
            let (mut vs_d, mut vs_r) = (0usize, 0usize);
            for (bare, t) in &traced_ok {
                let u = |i: usize| s.utility(&t[i], bare.as_ref(), f).map(|x| x.value);
                let g = u(0)?;
                vs_d += usize::from(g > u(1)?);
                vs_r += usize::from(g > u(2)?);
            }
            points.push(SweepPoint {
                alpha,
                top_k_frac,
                score: 100.0 * (vs_d + vs_r) as f64 / (2.0 * n),
            });
        }
    }
    if !skipped.is_empty() {
        write_jsonl(&run.out("skipped.jsonl"), &skipped)?;
    }
    let report = ReportFile::Sweep(SweepReport {
        objective: format!("mean {} gold win rate vs distractor and random", f.name()),
        points,
    });
    print!("{}", report.summary());
    run.write_report(&report)
}

pub fn synth(dest: &Path, cfg: &NeedleWorldConfig) -> Result<()> {
    let world = needle_world(cfg)?;
    std::fs::create_dir_all(dest)?;
    write_jsonl(&dest.join("corpus.jsonl"), &world.corpus)?;
    write_jsonl(&dest.join("queries.jsonl"), &world.queries)?;
    write_jsonl(&dest.join("rewrites.jsonl"), &world.rewrites)?;
    println!(
        "wrote {} documents, {} queries to {}",
        world.corpus.len(),
        world.queries.len(),
        dest.display()
    );
    Ok(())
}
