use grogu::backend::{NeedleLm, NeedleLmParams};
use grogu::prefdata::{
    build_dpo_pairs, build_sft_records, filter_by_gap, keep_count, score_rewrite_sets, PrefConfig, PreferencePair,
    QidScores, ScoreCache,
};
use grogu::retrieval::{Bm25Params, InvertedIndex, TokenizerConfig};
use grogu::scoring::{Scorer, ScoringConfig};
use grogu::synth::{needle_world, NeedleWorld, NeedleWorldConfig};
use proptest::prelude::*;

// dyadic scores keep shifted arithmetic exact
fn qid_scores() -> impl Strategy<Value = Vec<QidScores>> {
    prop::collection::vec(prop::collection::vec(-16i32..16, 1..6), 1..30).prop_map(|qs| {
        qs.into_iter()
            .enumerate()
            .map(|(i, s)| QidScores {
                qid: format!("q{i:02}"),
                prompt: format!("prompt {i}"),
                scores: s
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (format!("rewrite {j}"), *v as f64 * 0.125))
                    .collect(),
            })
            .collect()
    })
}

fn shifted(qs: &[QidScores], by: &[i32]) -> Vec<QidScores> {
    qs.iter()
        .zip(by.iter().cycle())
        .map(|(q, s)| QidScores {
            scores: q.scores.iter().map(|(r, v)| (r.clone(), v + *s as f64 * 0.5)).collect(),
            ..q.clone()
        })
        .collect()
}

fn choices(p: &[PreferencePair]) -> Vec<(String, String, String, f64)> {
    p.iter()
        .map(|x| (x.qid.clone(), x.chosen.clone(), x.rejected.clone(), x.gap))
        .collect()
}

proptest! {
    #[test]
    fn per_question_shift_changes_no_choice(qs in qid_scores(), by in prop::collection::vec(-8i32..8, 1..5), f in 0.05f64..1.0) {
        let (a, _) = build_dpo_pairs(&qs);
        let (b, _) = build_dpo_pairs(&shifted(&qs, &by));
        prop_assert_eq!(choices(&a), choices(&b));
        prop_assert_eq!(choices(&filter_by_gap(&a, f)), choices(&filter_by_gap(&b, f)));
        let sft = |q: &[QidScores]| build_sft_records(q).0.into_iter().map(|r| r.target).collect::<Vec<_>>();
        prop_assert_eq!(sft(&qs), sft(&shifted(&qs, &by)));
    }

    #[test]
    fn filter_keeps_ceiling_of_fraction_with_largest_gaps(qs in qid_scores(), pct in 1u32..=100) {
        let (pairs, _) = build_dpo_pairs(&qs);
        let f = pct as f64 / 100.0;
        let kept = filter_by_gap(&pairs, f);
        let n = pairs.len();
        let want = if n == 0 { 0 } else { (pct as usize * n).div_ceil(100).max(1) };
        prop_assert_eq!(kept.len(), want);
        prop_assert_eq!(keep_count(n, f), want);
        let min_kept = kept.iter().map(|p| p.gap).fold(f64::INFINITY, f64::min);
        for p in pairs.iter().filter(|p| !kept.iter().any(|k| k.qid == p.qid)) {
            prop_assert!(p.gap <= min_kept);
        }
        prop_assert!(kept.windows(2).all(|w| w[0].qid < w[1].qid));
    }

    #[test]
    fn pairs_have_positive_gaps_and_ordered_scores(qs in qid_scores()) {
        let (pairs, skipped) = build_dpo_pairs(&qs);
        prop_assert_eq!(pairs.len() + skipped.len(), qs.len());
        for p in &pairs {
            prop_assert!(p.gap > 0.0);
            prop_assert_eq!(p.gap, p.chosen_score - p.rejected_score);
        }
    }
}

fn world() -> (NeedleWorld, InvertedIndex) {
    let w = needle_world(&NeedleWorldConfig {
        queries: 12,
        ..Default::default()
    })
    .unwrap();
    let idx = InvertedIndex::build(w.corpus.clone(), TokenizerConfig::default()).unwrap();
    (w, idx)
}

fn emitted(w: &NeedleWorld, idx: &InvertedIndex, cache: Option<&ScoreCache>) -> Vec<u8> {
    let m = NeedleLm::new("needle", NeedleLmParams::default()).unwrap();
    let cfg = ScoringConfig::default();
    let scorer = Scorer::new(&m, &cfg);
    let pref = PrefConfig::default();
    let (scores, _, _) = score_rewrite_sets(&w.rewrites, idx, &Bm25Params::default(), &scorer, &pref, cache).unwrap();
    let (pairs, _) = build_dpo_pairs(&scores);
    let (sft, _) = build_sft_records(&scores);
    let mut out = Vec::new();
    for p in filter_by_gap(&pairs, pref.keep_fraction) {
        out.extend(serde_json::to_vec(&p).unwrap());
        out.push(b'\n');
    }
    for r in sft {
        out.extend(serde_json::to_vec(&r).unwrap());
        out.push(b'\n');
    }
    out
}

#[test]
fn cache_never_changes_emitted_bytes() {
    let (w, idx) = world();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cache.jsonl");
    let plain = emitted(&w, &idx, None);
    assert!(!plain.is_empty());
    let cold = ScoreCache::open(&path).unwrap();
    assert_eq!(emitted(&w, &idx, Some(&cold)), plain);
    let filled = cold.len();
    assert!(filled > 0);
    drop(cold);
    let warm = ScoreCache::open(&path).unwrap();
    assert_eq!(warm.len(), filled);
    assert_eq!(emitted(&w, &idx, Some(&warm)), plain);
    assert_eq!(warm.len(), filled);
}

#[test]
fn pipeline_output_does_not_depend_on_thread_count() {
    let (w, idx) = world();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| emitted(&w, &idx, None))
    };
    let one = run(1);
    assert_eq!(run(4), one);
    assert_eq!(run(1), one);
}
