//! Grounding utility for retrieval-augmented generation.
//!
//! A grounding context is useful to a particular language model when the
//! model becomes confident in its answer after reading it. This crate scores
//! contexts that way, using only the model's own token distributions: no gold
//! answers and no human relevance labels.
//!
//! The main pieces:
//!
//! * [`metric`]: entropy and perplexity over per-token distributions, key-token
//!   selection and the utility score itself.
//! * [`backend`]: the [`backend::LanguageModel`] trait, an analytic Needle LM,
//!   an HTTP completions client and JSONL trace record/replay.
//! * [`retrieval`]: a BM25 inverted index over a JSONL corpus.
//! * [`scoring`]: question + context to trace to [`metric::UtilityScore`].
//! * [`eval`]: gold-document tests, concordance with downstream accuracy, and
//!   layout selection.
//! * [`prefdata`]: preference pairs for query rewriters.

pub mod backend;
pub mod error;
pub mod eval;
pub mod io;
pub mod metric;
pub mod prefdata;
pub mod retrieval;
pub mod scoring;
pub mod synth;

pub use error::{Error, ErrorClass, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/utility.md")]
    mod utility {}
    #[doc = include_str!("../../../book/src/backends.md")]
    mod backends {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/preference-data.md")]
    mod preference_data {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
