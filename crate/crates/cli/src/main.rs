//! `grogu`: index, score, evaluate and build preference data from the command line.

mod commands;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grogu::backend::BackendKind;
use grogu::eval::{GoldPlacement, TiePolicy};
use grogu::metric::{ConfidenceFormulation, UtilityMode};
use grogu::prefdata::QuestionSlot;
use grogu::synth::NeedleWorldConfig;
use grogu::{Error, ErrorClass};
use serde::Serialize;

use crate::commands::Run;
use crate::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "grogu",
    version,
    about = "Grounded-generation utility scoring for retrieval-augmented generation"
)]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    cmd: Cmd,
}

/// Settings shared by every subcommand. Flags override the config file,
/// which overrides the built-in defaults shown here.
#[derive(Debug, Args)]
struct Opts {
    /// TOML config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root directory for run directories [default: runs]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run directory name [default: <UTC timestamp>-<config hash>]
    #[arg(long, global = true)]
    run_name: Option<String>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for every random choice [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Corpus JSONL: {"id", "title", "contents"}
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Queries JSONL: {"qid", "question", "history", "gold_answers", "gold_doc_id"}
    #[arg(long, global = true)]
    queries: Option<PathBuf>,
    /// Rewrite sets JSONL: {"qid", "conversation", "question", "rewrites"}
    #[arg(long, global = true)]
    rewrites: Option<PathBuf>,
    /// Prebuilt index; the corpus is indexed on the fly when absent
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    /// Trace JSONL to replay with --backend trace
    #[arg(long, global = true)]
    traces: Option<PathBuf>,
    /// Append every live model call to this trace JSONL
    #[arg(long, global = true)]
    record: Option<PathBuf>,
    /// Rewrite utility cache JSONL
    #[arg(long, global = true)]
    score_cache: Option<PathBuf>,

    /// Key-token entropy-change threshold in nats [default: 0.05]
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Fraction of tokens kept when no token passes the threshold [default: 0.1]
    #[arg(long, global = true)]
    top_k_frac: Option<f64>,
    /// Confidence formulation: keyentropy, entropy, keyppl or ppl [default: keyentropy]
    #[arg(long, global = true)]
    metric: Option<ConfidenceFormulation>,
    /// full (grounded minus ungrounded) or grounded_only [default: grounded_only]
    #[arg(long, global = true)]
    mode: Option<UtilityMode>,
    /// Documents retrieved per query [default: 10]
    #[arg(long, global = true)]
    top_n: Option<usize>,
    /// Fraction of preference pairs kept, largest gaps first [default: 0.5]
    #[arg(long, global = true)]
    keep_frac: Option<f64>,
    /// BM25 term saturation [default: 0.9]
    #[arg(long, global = true)]
    k1: Option<f64>,
    /// BM25 length normalization [default: 0.4]
    #[arg(long, global = true)]
    b: Option<f64>,
    /// Stem terms when indexing and querying [default: off]
    #[arg(long, global = true)]
    stem: bool,
    /// Drop stopwords when indexing and querying [default: off]
    #[arg(long, global = true)]
    remove_stopwords: bool,

    /// needle, trace or http [default: needle]
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    /// Model identifier [default: needle]
    #[arg(long, global = true)]
    model_id: Option<String>,
    /// Generation length cap [default: 64]
    #[arg(long, global = true)]
    max_new_tokens: Option<usize>,
    /// Needle LM: number of leading documents the model can see [default: all]
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Remote model vocabulary size, needed for entropy bounds [default: 0]
    #[arg(long, global = true)]
    vocab_size: Option<usize>,
    /// What the model is asked while rewrites are scored: original or rewrite [default: original]
    #[arg(long, global = true)]
    question_slot: Option<QuestionSlot>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
enum Cmd {
    /// Build a BM25 index file from the corpus
    Index,
    /// Rank documents for one query, or for every query in --queries
    Retrieve {
        /// Free-text query
        #[arg(long)]
        query: Option<String>,
    },
    /// Score the top-n retrieved documents of every query
    Score,
    /// Gold vs distractor vs random identification, all four formulations
    EvalGold,
    /// Concordance of utility with answer correctness, all four formulations
    EvalConcordance {
        /// Non-gold documents per context [default: 4]
        #[arg(long)]
        padding: Option<usize>,
        /// first, last or random [default: random]
        #[arg(long)]
        gold_placement: Option<GoldPlacement>,
        /// How utility ties count: discordant or split [default: discordant]
        #[arg(long)]
        ties: Option<TiePolicy>,
    },
    /// Cross-model selection between three layouts of the same ten documents
    EvalLayout {
        /// Second model backend [default: needle]
        #[arg(long)]
        model_j_backend: Option<BackendKind>,
        /// Second model identifier [default: needle-w5]
        #[arg(long)]
        model_j_id: Option<String>,
        /// Second Needle LM window [default: 5]
        #[arg(long)]
        model_j_window: Option<usize>,
    },
    /// Score rewrites and write SFT and DPO JSONL
    BuildPrefs,
    /// Re-render summary.txt and per_case.csv of an earlier run
    Report {
        /// Run directory holding report.json
        run: PathBuf,
    },
    /// Grid search over the key-token threshold and fallback fraction
    Sweep,
    /// Write a seeded synthetic corpus, queries and rewrites for the Needle LM
    Synth {
        /// Output directory [default: the run directory]
        #[arg(long)]
        dest: Option<PathBuf>,
        /// Number of queries [default: 200]
        #[arg(long, default_value_t = 200)]
        n_queries: usize,
        /// World seed [default: 7]
        #[arg(long, default_value_t = 7)]
        world_seed: u64,
    },
}

fn resolve(opts: &Opts, cmd: &Cmd) -> grogu::Result<PipelineConfig> {
    let mut c = match &opts.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
        if let Some(v) = src {
            *dst = v.clone();
        }
    }
    fn set_opt<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
        if src.is_some() {
            dst.clone_from(src);
        }
    }
    set(&mut c.paths.out, &opts.out);
    set_opt(&mut c.paths.corpus, &opts.corpus);
    set_opt(&mut c.paths.queries, &opts.queries);
    set_opt(&mut c.paths.rewrites, &opts.rewrites);
    set_opt(&mut c.paths.index, &opts.index);
    set_opt(&mut c.paths.traces, &opts.traces);
    set_opt(&mut c.paths.record, &opts.record);
    set_opt(&mut c.paths.score_cache, &opts.score_cache);
    set(&mut c.seed, &opts.seed);
    set(&mut c.key_tokens.alpha, &opts.alpha);
    set(&mut c.key_tokens.top_k_frac, &opts.top_k_frac);
    set(&mut c.formulation, &opts.metric);
    set(&mut c.mode, &opts.mode);
    set(&mut c.top_n, &opts.top_n);
    set(&mut c.keep_fraction, &opts.keep_frac);
    set(&mut c.bm25.k1, &opts.k1);
    set(&mut c.bm25.b, &opts.b);
    c.tokenizer.stem |= opts.stem;
    c.tokenizer.remove_stopwords |= opts.remove_stopwords;
    set(&mut c.model.backend, &opts.backend);
    set(&mut c.model.model_id, &opts.model_id);
    set(&mut c.model.max_new_tokens, &opts.max_new_tokens);
    set_opt(&mut c.model.window, &opts.window);
    set(&mut c.model.vocab_size, &opts.vocab_size);
    set(&mut c.question_slot, &opts.question_slot);
    match cmd {
        Cmd::EvalConcordance {
            padding,
            gold_placement,
            ties,
        } => {
            set(&mut c.concordance_padding, padding);
            set(&mut c.gold_placement, gold_placement);
            set(&mut c.ties, ties);
        }
        Cmd::EvalLayout {
            model_j_backend,
            model_j_id,
            model_j_window,
        } => {
            set(&mut c.model_j.backend, model_j_backend);
            set(&mut c.model_j.model_id, model_j_id);
            set_opt(&mut c.model_j.window, model_j_window);
        }
        _ => {}
    }
    Ok(c)
}

fn run(cli: Cli) -> grogu::Result<()> {
    if let Some(jobs) = cli.opts.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    if let Cmd::Report { run } = &cli.cmd {
        return commands::report(run);
    }
    let cfg = resolve(&cli.opts, &cli.cmd)?;
    let command = serde_json::to_value(&cli.cmd)?;
    let run = Run::start(cfg, &command, cli.opts.run_name.clone())?;
    log::info!("run directory {}", run.dir.display());
    match &cli.cmd {
        Cmd::Index => commands::index(&run),
        Cmd::Retrieve { query } => commands::retrieve_cmd(&run, query.as_deref()),
        Cmd::Score => commands::score(&run),
        Cmd::EvalGold => commands::eval_gold(&run),
        Cmd::EvalConcordance { .. } => commands::eval_concordance(&run),
        Cmd::EvalLayout { .. } => commands::eval_layout(&run),
        Cmd::BuildPrefs => commands::build_prefs(&run),
        Cmd::Sweep => commands::sweep(&run),
        Cmd::Synth {
            dest,
            n_queries,
            world_seed,
        } => commands::synth(
            dest.as_deref().unwrap_or(&run.dir),
            &NeedleWorldConfig {
                queries: *n_queries,
                seed: *world_seed,
                ..Default::default()
            },
        ),
        Cmd::Report { .. } => unreachable!("handled above"),
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::EmptyCorpus => "empty_corpus",
        Error::MissingInput(_) => "missing_input",
        Error::Config(_) => "config",
        Error::Parse { .. } | Error::Json(_) => "parse",
        Error::CacheMiss { .. } => "trace_cache_miss",
        Error::Integrity { .. } => "trace_integrity",
        Error::Transport { .. } => "transport",
        Error::Capability(_) => "capability",
        Error::Backend(_) => "backend",
        Error::IndexVersion { .. } => "index_version",
        Error::Io(_) => "io",
        _ => "validation",
    }
}

fn exit_code(class: ErrorClass) -> (u8, &'static str) {
    match class {
        ErrorClass::MissingInput => (2, "missing_input"),
        ErrorClass::Backend => (3, "backend"),
        ErrorClass::Validation => (4, "validation"),
        ErrorClass::Io => (1, "io"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(4);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, class) = exit_code(e.class());
            let msg = serde_json::json!({
                "error_class": class,
                "error_kind": error_kind(&e),
                "message": e.to_string(),
            });
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}
