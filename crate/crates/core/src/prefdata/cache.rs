//! Append-only JSONL cache of rewrite utilities.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{read_jsonl, sha256_hex};
use crate::metric::{ConfidenceFormulation, UtilityScore};
use crate::scoring::Scorer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCacheEntry {
    pub key: String,
    pub value: f64,
    pub utility: UtilityScore,
    /// Seconds since the Unix epoch at insertion.
    pub timestamp: u64,
}

/// Everything that can change a utility value goes into the key: model,
/// formulation, key-token settings, mode, prompt template, the question and
/// history placed in the prompt, the rewrite and the retrieved doc ids.
pub fn cache_key(
    scorer: &Scorer<'_>,
    formulation: ConfidenceFormulation,
    question: &str,
    history: &[String],
    rewrite: &str,
    doc_ids: &[String],
) -> Result<String> {
    let cfg = scorer.config();
    let identity = serde_json::json!([
        scorer.model().model_id(),
        formulation,
        cfg.key_tokens.alpha,
        cfg.key_tokens.top_k_frac,
        cfg.mode,
        cfg.max_new_tokens,
        cfg.prompt,
        question,
        history,
        rewrite,
        doc_ids,
    ]);
    Ok(sha256_hex(serde_json::to_string(&identity)?.as_bytes()))
}

#[derive(Debug)]
pub struct ScoreCache {
    entries: RwLock<HashMap<String, UtilityScore>>,
    writer: Mutex<BufWriter<File>>,
}

impl ScoreCache {
    /// Loads existing entries and opens the file for appending.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            for e in read_jsonl::<ScoreCacheEntry>(path)? {
                entries.entry(e.key).or_insert(e.utility);
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: RwLock::new(entries),
            writer: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<UtilityScore> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, key: &str, utility: &UtilityScore) -> Result<()> {
        let mut entries = self.entries.write().expect("cache lock");
        if entries.contains_key(key) {
            return Ok(());
        }
        let entry = ScoreCacheEntry {
            key: key.to_string(),
            value: utility.value,
            utility: utility.clone(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        let mut w = self.writer.lock().expect("cache writer");
        serde_json::to_writer(&mut *w, &entry)?;
        w.write_all(b"\n")?;
        w.flush()?;
        entries.insert(entry.key, entry.utility);
        Ok(())
    }
}
