use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::DocumentRecord;
use super::tokenize::TokenizerConfig;
use crate::error::{Error, Result};
use crate::io::write_atomic;

const MAGIC: &[u8; 8] = b"GROGUIDX";
pub const INDEX_VERSION: u32 = 1;

/// Immutable term -> postings map over a document collection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertedIndex {
    tokenizer: TokenizerConfig,
    docs: Vec<DocumentRecord>,
    /// term -> (document ordinal, term frequency), ordinals ascending
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    #[serde(skip)]
    ordinals: HashMap<String, u32>,
}

impl InvertedIndex {
    pub fn build(corpus: Vec<DocumentRecord>, tokenizer: TokenizerConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ordinals = HashMap::with_capacity(corpus.len());
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for (ord, doc) in corpus.iter().enumerate() {
            let ord = ord as u32;
            if ordinals.insert(doc.id.clone(), ord).is_some() {
                return Err(Error::DuplicateDocId(doc.id.clone()));
            }
            let terms = tokenizer.tokenize(&doc.contents);
            doc_lengths.push(terms.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((ord, count));
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        Ok(Self {
            tokenizer,
            docs: corpus,
            postings,
            doc_lengths,
            avg_doc_length,
            ordinals,
        })
    }

    pub fn tokenizer(&self) -> TokenizerConfig {
        self.tokenizer
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn documents(&self) -> &[DocumentRecord] {
        &self.docs
    }

    pub fn document(&self, doc_id: &str) -> Result<&DocumentRecord> {
        self.ordinal(doc_id).map(|o| &self.docs[o as usize])
    }

    pub fn doc_length(&self, doc_id: &str) -> Result<u32> {
        self.ordinal(doc_id).map(|o| self.doc_lengths[o as usize])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_freq(&self, term: &str, doc_id: &str) -> Result<u32> {
        let ord = self.ordinal(doc_id)?;
        Ok(self.tf_by_ordinal(term, ord))
    }

    pub(crate) fn ordinal(&self, doc_id: &str) -> Result<u32> {
        self.ordinals
            .get(doc_id)
            .copied()
            .ok_or_else(|| Error::UnknownDocId(doc_id.to_string()))
    }

    pub(crate) fn tf_by_ordinal(&self, term: &str, ord: u32) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| p.binary_search_by_key(&ord, |&(o, _)| o).ok().map(|i| p[i].1))
            .unwrap_or(0)
    }

    pub(crate) fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub(crate) fn length_by_ordinal(&self, ord: u32) -> u32 {
        self.doc_lengths[ord as usize]
    }

    pub(crate) fn doc_by_ordinal(&self, ord: u32) -> &DocumentRecord {
        &self.docs[ord as usize]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::from(&MAGIC[..]);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        let body = bincode::serialize(self).map_err(|e| Error::Structural(e.to_string()))?;
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Structural("not an index file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != INDEX_VERSION {
            return Err(Error::IndexVersion {
                found: version,
                expected: INDEX_VERSION,
            });
        }
        let mut index: Self = bincode::deserialize(&bytes[12..]).map_err(|e| Error::Structural(e.to_string()))?;
        index.ordinals = index
            .docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i as u32))
            .collect();
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }
}
