use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_jsonl;

/// One corpus line: `{"id", "title", "contents"}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub contents: String,
}

impl DocumentRecord {
    pub fn new(id: impl Into<String>, title: impl Into<String>, contents: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            contents: contents.into(),
        }
    }
}

/// One query line. Gold fields are read only by evaluation code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub qid: String,
    pub question: String,
    #[serde(default)]
    pub history: Vec<String>,
    #[serde(default)]
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_doc_id: Option<String>,
}

pub fn read_corpus(path: &Path) -> Result<Vec<DocumentRecord>> {
    let docs: Vec<DocumentRecord> = read_jsonl(path)?;
    for d in &docs {
        if d.contents.trim().is_empty() {
            return Err(Error::Structural(format!("document `{}` has empty contents", d.id)));
        }
    }
    Ok(docs)
}

pub fn read_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    let queries: Vec<QueryRecord> = read_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    for q in &queries {
        if !seen.insert(q.qid.as_str()) {
            return Err(Error::Structural(format!("duplicate qid `{}`", q.qid)));
        }
    }
    Ok(queries)
}
