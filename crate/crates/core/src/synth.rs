//! Seeded synthetic corpora for the Needle LM.
//!
//! Each query is about a made-up entity (a pseudo-word outside the model's
//! vocabulary) and one of its attributes. The corpus holds, per query:
//!
//! * one gold document stating `The <attr> of <entity> is <answer>.`;
//! * distractors that mention the entity and attribute but state nothing;
//! * filler documents made of words the model does not know;
//! * for a small fraction of queries, a misleading document stating a wrong
//!   answer in the same form as the gold one.
//!
//! Queries are conversational: the entity is named only in the history, the
//! question refers to it by pronoun. Rewrite sets mix rewrites that name the
//! entity (and so retrieve the gold document) with ones that do not.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::default_vocabulary;
use crate::error::{Error, Result};
use crate::prefdata::RewriteSet;
use crate::retrieval::{is_stopword, DocumentRecord, QueryRecord};

const ATTRIBUTES: [&str; 8] = [
    "motto", "emblem", "anthem", "founder", "mascot", "patron", "currency", "symbol",
];

const FILLER: [&str; 30] = [
    "ledger", "quarry", "thicket", "gravel", "meadow", "chimney", "parcel", "lattice", "furnace", "saddle", "brook",
    "hollow", "timber", "orchard", "cottage", "pasture", "beacon", "anvil", "barrel", "cellar", "ridge", "kettle",
    "shingle", "hamlet", "ferry", "quilt", "spindle", "wagon", "trellis", "cistern",
];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleWorldConfig {
    pub queries: usize,
    pub seed: u64,
    /// Fraction of queries that also get a misleading document.
    pub misleading_fraction: f64,
    pub distractors_per_query: usize,
    pub fillers_per_query: usize,
}

impl Default for NeedleWorldConfig {
    fn default() -> Self {
        Self {
            queries: 200,
            seed: 7,
            misleading_fraction: 0.05,
            distractors_per_query: 2,
            fillers_per_query: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeedleWorld {
    pub corpus: Vec<DocumentRecord>,
    pub queries: Vec<QueryRecord>,
    pub rewrites: Vec<RewriteSet>,
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    (0..3)
        .flat_map(|_| {
            [
                CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char,
                VOWELS[rng.gen_range(0..VOWELS.len())] as char,
            ]
        })
        .collect()
}

fn filler<'a>(rng: &mut ChaCha8Rng) -> &'a str {
    FILLER[rng.gen_range(0..FILLER.len())]
}

fn filler_sentence(rng: &mut ChaCha8Rng) -> String {
    let (a, b, c) = (filler(rng), filler(rng), filler(rng));
    match rng.gen_range(0..3) {
        0 => format!("The {a} near the {b} was mended with {c}."),
        1 => format!("A {a} and a {b} stood by the old {c}."),
        _ => format!("Beyond the {a}, the {b} leaned toward the {c}."),
    }
}

pub fn needle_world(cfg: &NeedleWorldConfig) -> Result<NeedleWorld> {
    if cfg.queries == 0 {
        return Err(Error::Config("needle world needs at least one query".into()));
    }
    if !(0.0..=1.0).contains(&cfg.misleading_fraction) {
        return Err(Error::Config("misleading_fraction must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = default_vocabulary();
    // content words only: drop `unknown` and `</s>`
    let answer_words: Vec<&str> = vocab[1..vocab.len() - 1].iter().map(String::as_str).collect();
    let mut taken: HashSet<String> = vocab.iter().cloned().collect();
    taken.extend(FILLER.iter().map(|w| w.to_string()));
    taken.extend(ATTRIBUTES.iter().map(|w| w.to_string()));

    let n_misleading = (cfg.misleading_fraction * cfg.queries as f64).round() as usize;
    let mut order: Vec<usize> = (0..cfg.queries).collect();
    order.shuffle(&mut rng);
    let misleading: HashSet<usize> = order[..n_misleading].iter().copied().collect();

    let mut corpus = Vec::new();
    let mut queries = Vec::new();
    let mut rewrites = Vec::new();
    let mut next_doc = 0usize;
    let mut doc_id = || {
        next_doc += 1;
        format!("d{next_doc:05}")
    };
    for i in 0..cfg.queries {
        let entity = loop {
            let w = pseudo_word(&mut rng);
            if !is_stopword(&w) && taken.insert(w.clone()) {
                break w;
            }
        };
        let attr = ATTRIBUTES[rng.gen_range(0..ATTRIBUTES.len())];
        let len = rng.gen_range(1..=3);
        let answer: Vec<&str> = answer_words.choose_multiple(&mut rng, len).copied().collect();
        let answer_text = answer.join(" ");
        let title = capitalize(&entity);

        let gold_id = doc_id();
        corpus.push(DocumentRecord::new(
            &gold_id,
            &title,
            format!(
                "The {attr} of {entity} is {answer_text}. It was recorded near the {} by the {}.",
                filler(&mut rng),
                filler(&mut rng)
            ),
        ));
        for k in 0..cfg.distractors_per_query {
            let text = if k % 2 == 0 {
                format!(
                    "Scholars of {entity} disagree about the {attr} and the {} of the {}.",
                    filler(&mut rng),
                    filler(&mut rng)
                )
            } else {
                format!(
                    "{title} has a long history; its {attr} was debated near the {}. {}",
                    filler(&mut rng),
                    filler_sentence(&mut rng)
                )
            };
            corpus.push(DocumentRecord::new(
                doc_id(),
                format!("{title} ({})", filler(&mut rng)),
                text,
            ));
        }
        if misleading.contains(&i) {
            let wrong: Vec<&str> = answer_words
                .iter()
                .filter(|w| !answer.contains(w))
                .copied()
                .collect::<Vec<_>>()
                .choose_multiple(&mut rng, 2)
                .copied()
                .collect();
            corpus.push(DocumentRecord::new(
                doc_id(),
                &title,
                format!("The {attr} of {entity} is {}.", wrong.join(" ")),
            ));
        }
        for _ in 0..cfg.fillers_per_query {
            let text = format!("{} {}", filler_sentence(&mut rng), filler_sentence(&mut rng));
            corpus.push(DocumentRecord::new(doc_id(), capitalize(filler(&mut rng)), text));
        }

        let qid = format!("q{:04}", i + 1);
        let history = vec![format!("Tell me about {entity}.")];
        let question = format!("What is its {attr}?");
        queries.push(QueryRecord {
            qid: qid.clone(),
            question: question.clone(),
            history: history.clone(),
            gold_answers: vec![answer_text],
            gold_doc_id: Some(gold_id),
        });
        let mut candidates = vec![
            format!("What is the {attr} of {entity}?"),
            format!("{entity} {attr}"),
            format!("Tell me about {entity}."),
            question.clone(),
            format!("What is the {attr}?"),
            format!("{attr} history"),
        ];
        candidates.shuffle(&mut rng);
        rewrites.push(RewriteSet {
            qid,
            conversation: history,
            question,
            rewrites: candidates,
        });
    }
    Ok(NeedleWorld {
        corpus,
        queries,
        rewrites,
    })
}
