//! Corpus ingestion, inverted index and Okapi BM25 ranking.

mod bm25;
mod corpus;
mod index;
mod tokenize;

pub use bm25::{bm25_score, idf, retrieve, Bm25Params, RetrievalResult};
pub use corpus::{read_corpus, read_queries, DocumentRecord, QueryRecord};
pub use index::{InvertedIndex, INDEX_VERSION};
pub use tokenize::{is_stopword, tokenize_text, TokenizerConfig, STOPWORDS};
