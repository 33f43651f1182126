//! Record and replay backend outputs as JSONL.
//!
//! Each row is keyed by the first 64 bits of SHA-256 over
//! `(model_id, prompt, kind, tokens)`. Generation rows use an empty token
//! list in the key and store the generated tokens; scoring rows store the
//! forced tokens. The full prompt hash and token list are kept in the row, so
//! a truncated-key collision is detected instead of served.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Generation, LanguageModel, PositionScore, Prompt};
use crate::error::{Error, Result};
use crate::io::{read_jsonl, sha256_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRowScore {
    pub lp: f64,
    pub top: Vec<(String, f64)>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub key: String,
    pub model: String,
    pub prompt_sha256: String,
    pub tokens: Vec<String>,
    pub scores: Vec<TraceRowScore>,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Generate,
    Force,
}

impl RowKind {
    fn tag(self) -> &'static str {
        match self {
            RowKind::Generate => "generate",
            RowKind::Force => "force",
        }
    }
}

/// 16 hex characters (64 bits) of SHA-256 over the row identity.
pub fn trace_key(model: &str, prompt: &str, kind: &str, tokens: &[String]) -> String {
    let mut h = Sha256::new();
    for part in [model, prompt, kind] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    for t in tokens {
        h.update(t.as_bytes());
        h.update([0x1fu8]);
    }
    hex::encode(&h.finalize()[..8])
}

impl TraceRow {
    fn from_positions(
        key: String,
        model: &str,
        prompt: &str,
        tokens: Vec<String>,
        positions: &[PositionScore],
    ) -> Self {
        Self {
            key,
            model: model.to_string(),
            prompt_sha256: sha256_hex(prompt.as_bytes()),
            tokens,
            vocab_size: positions.first().map_or(0, |p| p.vocab_size),
            scores: positions
                .iter()
                .map(|p| TraceRowScore {
                    lp: p.logprob,
                    top: p.top.clone(),
                    residual: p.residual,
                })
                .collect(),
        }
    }

    fn positions(&self, tokens: &[String]) -> Vec<PositionScore> {
        tokens
            .iter()
            .zip(&self.scores)
            .map(|(t, s)| PositionScore {
                token: t.clone(),
                logprob: s.lp,
                top: s.top.clone(),
                residual: s.residual,
                vocab_size: self.vocab_size,
            })
            .collect()
    }
}

/// Concurrent-read, single-writer store of trace rows.
#[derive(Debug)]
pub struct TraceStore {
    path: Option<PathBuf>,
    rows: RwLock<HashMap<String, TraceRow>>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl TraceStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            rows: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Loads an existing trace file for replay.
    pub fn open(path: &Path) -> Result<Self> {
        let rows = Self::load_rows(path)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            rows: RwLock::new(rows),
            writer: Mutex::new(None),
        })
    }

    /// Opens (or creates) a trace file for appending new rows.
    pub fn open_for_append(path: &Path) -> Result<Self> {
        let rows = if path.exists() {
            Self::load_rows(path)?
        } else {
            HashMap::new()
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            rows: RwLock::new(rows),
            writer: Mutex::new(Some(BufWriter::new(file))),
        })
    }

    fn load_rows(path: &Path) -> Result<HashMap<String, TraceRow>> {
        let mut rows = HashMap::new();
        for row in read_jsonl::<TraceRow>(path)? {
            if let Some(prev) = rows.get(&row.key) {
                if prev != &row {
                    return Err(Error::Integrity {
                        key: row.key.clone(),
                        detail: format!("conflicting rows in {}", path.display()),
                    });
                }
                continue;
            }
            rows.insert(row.key.clone(), row);
        }
        Ok(rows)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.rows.read().expect("trace lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<TraceRow> {
        self.rows.read().expect("trace lock").get(key).cloned()
    }

    /// Adds a row; identical duplicates are ignored, conflicting ones rejected.
    pub fn insert(&self, row: TraceRow) -> Result<()> {
        let mut rows = self.rows.write().expect("trace lock");
        if let Some(prev) = rows.get(&row.key) {
            if prev.model != row.model || prev.prompt_sha256 != row.prompt_sha256 || prev.tokens != row.tokens {
                return Err(Error::Integrity {
                    key: row.key,
                    detail: "a different payload is already stored under this key".into(),
                });
            }
            return Ok(());
        }
        if let Some(w) = self.writer.lock().expect("trace writer").as_mut() {
            serde_json::to_writer(&mut *w, &row)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        rows.insert(row.key.clone(), row);
        Ok(())
    }

    /// All rows sorted by key.
    pub fn rows(&self) -> Vec<TraceRow> {
        let mut v: Vec<TraceRow> = self.rows.read().expect("trace lock").values().cloned().collect();
        v.sort_by(|a, b| a.key.cmp(&b.key));
        v
    }

    fn lookup(&self, model: &str, prompt: &str, kind: RowKind, forced: &[String]) -> Result<TraceRow> {
        let key_tokens: &[String] = if kind == RowKind::Force { forced } else { &[] };
        let key = trace_key(model, prompt, kind.tag(), key_tokens);
        let row = self.get(&key).ok_or_else(|| Error::CacheMiss { key: key.clone() })?;
        let sha = sha256_hex(prompt.as_bytes());
        if row.model != model || row.prompt_sha256 != sha {
            return Err(Error::Integrity {
                key,
                detail: "stored model or prompt hash differs".into(),
            });
        }
        if kind == RowKind::Force && row.tokens != forced {
            return Err(Error::Integrity {
                key,
                detail: "stored forced tokens differ".into(),
            });
        }
        if row.scores.len() != row.tokens.len() {
            return Err(Error::Integrity {
                key,
                detail: format!("{} tokens but {} scores", row.tokens.len(), row.scores.len()),
            });
        }
        Ok(row)
    }
}

/// Wraps a live backend and writes every call into a [`TraceStore`].
pub struct TraceRecorder<M> {
    inner: M,
    store: Arc<TraceStore>,
}

impl<M: LanguageModel> TraceRecorder<M> {
    pub fn new(inner: M, store: Arc<TraceStore>) -> Self {
        Self { inner, store }
    }

    pub fn store(&self) -> &Arc<TraceStore> {
        &self.store
    }
}

impl<M: LanguageModel> LanguageModel for TraceRecorder<M> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn greedy_generate(&self, prompt: &Prompt, max_new_tokens: usize) -> Result<Generation> {
        let g = self.inner.greedy_generate(prompt, max_new_tokens)?;
        let key = trace_key(self.model_id(), &prompt.text, RowKind::Generate.tag(), &[]);
        self.store.insert(TraceRow::from_positions(
            key,
            self.model_id(),
            &prompt.text,
            g.tokens.clone(),
            &g.scores,
        ))?;
        Ok(g)
    }

    fn force_score(&self, prompt: &Prompt, forced: &[String]) -> Result<Vec<PositionScore>> {
        let scores = self.inner.force_score(prompt, forced)?;
        let key = trace_key(self.model_id(), &prompt.text, RowKind::Force.tag(), forced);
        self.store.insert(TraceRow::from_positions(
            key,
            self.model_id(),
            &prompt.text,
            forced.to_vec(),
            &scores,
        ))?;
        Ok(scores)
    }

    fn detokenize(&self, tokens: &[String]) -> String {
        self.inner.detokenize(tokens)
    }
}

/// Serves recorded outputs; any unrecorded request is a cache miss.
pub struct TraceReplay {
    model_id: String,
    store: Arc<TraceStore>,
}

impl TraceReplay {
    pub fn new(model_id: impl Into<String>, store: Arc<TraceStore>) -> Self {
        Self {
            model_id: model_id.into(),
            store,
        }
    }
}

impl LanguageModel for TraceReplay {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn greedy_generate(&self, prompt: &Prompt, _max_new_tokens: usize) -> Result<Generation> {
        let row = self
            .store
            .lookup(&self.model_id, &prompt.text, RowKind::Generate, &[])?;
        Ok(Generation {
            scores: row.positions(&row.tokens),
            tokens: row.tokens,
        })
    }

    fn force_score(&self, prompt: &Prompt, forced: &[String]) -> Result<Vec<PositionScore>> {
        let row = self
            .store
            .lookup(&self.model_id, &prompt.text, RowKind::Force, forced)?;
        Ok(row.positions(forced))
    }
}
