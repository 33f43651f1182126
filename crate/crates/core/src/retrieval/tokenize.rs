use serde::{Deserialize, Serialize};

/// Index-time and query-time tokenization options. Both default to off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub stem: bool,
    pub remove_stopwords: bool,
}

pub const STOPWORDS: &[&str] = &[
    "a", "about", "an", "and", "are", "as", "at", "be", "been", "but", "by", "can", "did", "do", "does", "for", "from",
    "had", "has", "have", "he", "her", "his", "how", "i", "if", "in", "into", "is", "it", "its", "me", "my", "no",
    "not", "of", "on", "or", "our", "she", "so", "that", "the", "their", "them", "then", "there", "these", "they",
    "this", "to", "was", "we", "were", "what", "when", "where", "which", "who", "whom", "why", "will", "with", "would",
    "you", "your",
];

pub fn is_stopword(term: &str) -> bool {
    STOPWORDS.binary_search(&term).is_ok()
}

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize_text(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

impl TokenizerConfig {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut terms = tokenize_text(text);
        if self.remove_stopwords {
            terms.retain(|t| !is_stopword(t));
        }
        if self.stem {
            let stemmer = rust_stemmers::Stemmer::create(rust_stemmers::Algorithm::English);
            for t in &mut terms {
                *t = stemmer.stem(t).into_owned();
            }
        }
        terms
    }
}
