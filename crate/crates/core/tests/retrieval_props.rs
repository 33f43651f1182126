use grogu::retrieval::{bm25_score, retrieve, Bm25Params, DocumentRecord, InvertedIndex, TokenizerConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "zeta", "harbor", "lantern", "granite", "copper", "meadow", "falcon", "river", "orchard", "ember", "quartz",
    "willow", "thistle", "cobalt", "saffron", "juniper",
];

fn plain() -> TokenizerConfig {
    TokenizerConfig {
        stem: false,
        remove_stopwords: false,
    }
}

// doc 0 holds `tf` copies of "zeta" padded with "pad" to `len` words; the
// rest of the corpus is fixed
fn corpus_with(tf: usize, len: usize) -> Vec<DocumentRecord> {
    let mut target = vec!["zeta"; tf];
    target.resize(len, "pad");
    vec![
        DocumentRecord::new("d0", "", target.join(" ")),
        DocumentRecord::new("d1", "", "zeta harbor lantern"),
        DocumentRecord::new("d2", "", "granite copper meadow falcon"),
        DocumentRecord::new("d3", "", "river orchard"),
    ]
}

fn oracle(tf: f64, len: f64, avg: f64, n: f64, df: f64, p: Bm25Params) -> f64 {
    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
    idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * len / avg))
}

fn random_corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<DocumentRecord> {
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..20);
            let text: Vec<&str> = (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
            DocumentRecord::new(format!("doc{i:03}"), "", text.join(" "))
        })
        .collect()
}

fn random_query(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..5);
    (0..n)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

proptest! {
    #[test]
    fn more_occurrences_at_fixed_length_score_higher(tf in 1usize..12, extra in 1usize..10, k1 in 0.1f64..3.0, b in 0.0f64..1.0) {
        let len = tf + extra;
        let p = Bm25Params { k1, b };
        let q = vec!["zeta".to_string()];
        let lo = bm25_score(&InvertedIndex::build(corpus_with(tf, len), plain()).unwrap(), &p, &q, "d0").unwrap();
        let hi = bm25_score(&InvertedIndex::build(corpus_with(tf + 1, len), plain()).unwrap(), &p, &q, "d0").unwrap();
        prop_assert!(hi > lo, "tf {tf}: {hi} <= {lo}");
        let avg = (len + 3 + 4 + 2) as f64 / 4.0;
        let want = oracle(tf as f64, len as f64, avg, 4.0, 2.0, p);
        prop_assert!((lo - want).abs() < 1e-12, "{lo} vs oracle {want}");
    }

    #[test]
    fn ranking_ignores_corpus_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng, 40);
        let mut shuffled = corpus.clone();
        shuffled.shuffle(&mut rng);
        let a = InvertedIndex::build(corpus, plain()).unwrap();
        let b = InvertedIndex::build(shuffled, plain()).unwrap();
        let q = random_query(&mut rng);
        let ra = retrieve(&a, &Bm25Params::default(), "q", &q, 10);
        let rb = retrieve(&b, &Bm25Params::default(), "q", &q, 10);
        prop_assert_eq!(ra, rb);
    }
}

#[test]
fn index_round_trip_preserves_100_rankings() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let index = InvertedIndex::build(random_corpus(&mut rng, 300), TokenizerConfig::default()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("index.bin");
    index.save(&path).unwrap();
    let from_disk = InvertedIndex::load(&path).unwrap();
    let from_bytes = InvertedIndex::from_bytes(&index.to_bytes().unwrap()).unwrap();
    let p = Bm25Params::default();
    for i in 0..100 {
        let q = random_query(&mut rng);
        let want = retrieve(&index, &p, &format!("q{i}"), &q, 10);
        assert_eq!(retrieve(&from_disk, &p, &format!("q{i}"), &q, 10), want);
        assert_eq!(retrieve(&from_bytes, &p, &format!("q{i}"), &q, 10), want);
    }
}

#[test]
fn ranked_list_is_sorted_with_id_tiebreak() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let index = InvertedIndex::build(random_corpus(&mut rng, 200), plain()).unwrap();
    for _ in 0..50 {
        let r = retrieve(&index, &Bm25Params::default(), "q", &random_query(&mut rng), 25);
        for w in r.ranked.windows(2) {
            assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0), "{w:?}");
        }
    }
}

#[test]
fn identical_documents_tie_and_order_by_id() {
    let docs = vec![
        DocumentRecord::new("b", "", "zeta harbor"),
        DocumentRecord::new("a", "", "zeta harbor"),
        DocumentRecord::new("c", "", "river"),
    ];
    let index = InvertedIndex::build(docs, plain()).unwrap();
    let r = retrieve(&index, &Bm25Params::default(), "q", "zeta", 10);
    let ids: Vec<&str> = r.doc_ids().collect();
    assert_eq!(ids, ["a", "b"]);
    assert_eq!(r.ranked[0].1, r.ranked[1].1);
}
