//! Resolved pipeline configuration: defaults, then the config file, then flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use grogu::backend::{
    BackendKind, HttpBackend, HttpConfig, LanguageModel, ModelRef, NeedleLm, NeedleLmParams, PromptSpec, TraceRecorder,
    TraceReplay, TraceStore,
};
use grogu::eval::{GoldPlacement, TiePolicy};
use grogu::metric::{ConfidenceFormulation, KeyTokenConfig, UtilityMode};
use grogu::prefdata::QuestionSlot;
use grogu::retrieval::{Bm25Params, TokenizerConfig};
use grogu::scoring::ScoringConfig;
use grogu::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub rewrites: Option<PathBuf>,
    /// Recorded traces to replay (trace backend).
    pub traces: Option<PathBuf>,
    /// Where to append traces of live backend calls.
    pub record: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub score_cache: Option<PathBuf>,
    /// Root under which run directories are created.
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backend: BackendKind,
    pub model_id: String,
    pub max_new_tokens: usize,
    /// Needle LM peak probability.
    pub peak: f64,
    /// Needle LM visible documents; absent means all.
    pub window: Option<usize>,
    /// Vocabulary size of a remote model, used to bound the entropy of unseen tail mass.
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let r = ModelRef::default();
        Self {
            backend: r.backend_kind,
            model_id: r.model_id,
            max_new_tokens: r.max_new_tokens,
            peak: NeedleLmParams::default().peak,
            window: None,
            vocab_size: 0,
        }
    }
}

impl ModelConfig {
    pub fn model_ref(&self) -> ModelRef {
        ModelRef {
            backend_kind: self.backend,
            model_id: self.model_id.clone(),
            max_new_tokens: self.max_new_tokens,
        }
    }

    fn needle_params(&self) -> NeedleLmParams {
        NeedleLmParams {
            peak: self.peak,
            window: self.window,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub bm25: Bm25Params,
    pub tokenizer: TokenizerConfig,
    pub key_tokens: KeyTokenConfig,
    pub formulation: ConfidenceFormulation,
    pub mode: UtilityMode,
    pub prompt: PromptSpec,
    pub model: ModelConfig,
    /// Second model for layout selection.
    pub model_j: ModelConfig,
    pub top_n: usize,
    pub seed: u64,
    pub keep_fraction: f64,
    pub question_slot: QuestionSlot,
    pub concordance_padding: usize,
    pub gold_placement: GoldPlacement,
    pub ties: TiePolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let model_j = ModelConfig {
            model_id: "needle-w5".into(),
            window: Some(5),
            ..Default::default()
        };
        Self {
            paths: Paths {
                out: PathBuf::from("runs"),
                ..Default::default()
            },
            bm25: Bm25Params::default(),
            tokenizer: TokenizerConfig::default(),
            key_tokens: KeyTokenConfig::default(),
            formulation: ConfidenceFormulation::KeyEntropy,
            mode: UtilityMode::GroundedOnly,
            prompt: PromptSpec::default(),
            model: ModelConfig::default(),
            model_j,
            top_n: 10,
            seed: 0,
            keep_fraction: 0.5,
            question_slot: QuestionSlot::Original,
            concordance_padding: 4,
            gold_placement: GoldPlacement::Random,
            ties: TiePolicy::Discordant,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.bm25.validate()?;
        self.key_tokens.validate()?;
        self.prompt.validate()?;
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

    pub fn scoring(&self, model: &ModelConfig) -> ScoringConfig {
        ScoringConfig {
            prompt: self.prompt.clone(),
            key_tokens: self.key_tokens,
            mode: self.mode,
            max_new_tokens: model.max_new_tokens,
        }
    }

    /// Short content hash of the resolved configuration.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(grogu::io::sha256_hex(json.as_bytes())[..12].to_string())
    }

    pub fn require<'a>(&self, p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::Config(format!("no {what} path given (flag or config file)")))
    }

    /// Opens the configured backend, wrapped in a recorder when requested.
    pub fn open_model(&self, m: &ModelConfig) -> Result<Box<dyn LanguageModel>> {
        let id = m.model_id.clone();
        let base: Box<dyn LanguageModel> = match m.backend {
            BackendKind::Needle => Box::new(NeedleLm::new(id, m.needle_params())?),
            BackendKind::Trace => {
                let path = self.require(&self.paths.traces, "traces")?;
                Box::new(TraceReplay::new(id, Arc::new(TraceStore::open(path)?)))
            }
            BackendKind::Http => Box::new(HttpBackend::new(HttpConfig::from_env(id, m.vocab_size)?)?),
        };
        match (&self.paths.record, m.backend) {
            (Some(path), BackendKind::Needle | BackendKind::Http) => {
                let store = Arc::new(TraceStore::open_for_append(path)?);
                Ok(Box::new(TraceRecorder::new(base, store)))
            }
            _ => Ok(base),
        }
    }
}
