//! Acceptance criteria, one line each. Runs without the libtest harness so
//! every line is printed; exits non-zero if any criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use grogu::backend::{NeedleLm, NeedleLmParams, TraceRecorder, TraceReplay, TraceStore};
use grogu::eval::{
    build_concordance_pairs, build_gold_cases, build_layout_cases, concordance_tau, gold_win_rates,
    layout_selection_eval, mrr, recall_at_k, score_concordance, sign_test, ConcordanceCase, ConcordanceConfig,
    GoldReport, TiePolicy,
};
use grogu::metric::{
    entropy_bounds, select_key_tokens, token_entropy, ConfidenceFormulation, GenerationTrace, KeyTokenConfig,
    TokenDistribution, TokenScore, UtilityMode, UtilityScore,
};
use grogu::prefdata::{build_dpo_pairs, build_sft_records, filter_by_gap, keep_count, score_rewrite_sets, PrefConfig};
use grogu::retrieval::{bm25_score, Bm25Params, DocumentRecord, InvertedIndex, RetrievalResult, TokenizerConfig};
use grogu::scoring::{Scorer, ScoringConfig};
use grogu::synth::{needle_world, NeedleWorld, NeedleWorldConfig};
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> std::result::Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < limit_s,
        format!("took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64()),
    )
}

fn world() -> NeedleWorld {
    needle_world(&NeedleWorldConfig::default()).expect("needle world")
}

fn index_of(w: &NeedleWorld) -> InvertedIndex {
    InvertedIndex::build(w.corpus.clone(), TokenizerConfig::default()).expect("index")
}

fn needle(id: &str, window: Option<usize>) -> NeedleLm {
    NeedleLm::new(
        id,
        NeedleLmParams {
            window,
            ..Default::default()
        },
    )
    .expect("needle lm")
}

// double-double accumulation: exact to ~1e-30 relative for these sums
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn dd_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for v in values {
        let (s, e) = two_sum(hi, v);
        hi = s;
        lo += e;
    }
    hi + lo
}

fn random_probs(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.gen_range(1..=200);
    let skew: f64 = rng.gen_range(0.1..6.0);
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-3f64..1.0).powf(skew)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

fn c1_entropy() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let p = random_probs(&mut rng);
        let d = TokenDistribution::full(&p).map_err(|e| e.to_string())?;
        let got = token_entropy(&d).map_err(|e| e.to_string())?;
        let want = -dd_sum(p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()));
        let rel = if want == 0.0 {
            got.abs()
        } else {
            ((got - want) / want).abs()
        };
        worst = worst.max(rel);
    }
    ensure(worst <= 1e-9, format!("max relative error {worst:e}"))?;
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "10000 distributions, max rel err {worst:.1e}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn c2_bounds() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    for _ in 0..1000 {
        let mut p = random_probs(&mut rng);
        if p.len() < 2 {
            p = vec![0.5, 0.5];
        }
        let full = TokenDistribution::full(&p).map_err(|e| e.to_string())?;
        let exact = token_entropy(&full).map_err(|e| e.to_string())?;
        for k in [1usize, 5, 20] {
            let t = full.truncate_top_k(k).map_err(|e| e.to_string())?;
            let b = entropy_bounds(&t).map_err(|e| e.to_string())?;
            ensure(
                b.lower <= exact + 1e-12 && exact <= b.upper + 1e-12,
                format!("k={k}: {} <= {exact} <= {} violated", b.lower, b.upper),
            )?;
            checked += 1;
        }
    }
    let d = TokenDistribution::new(vec![(0, 0.9)], 0.1, 10).map_err(|e| e.to_string())?;
    let b = entropy_bounds(&d).map_err(|e| e.to_string())?;
    ensure(
        (b.lower - 0.325083).abs() <= 1e-6 && (b.upper - 0.544806).abs() <= 1e-6,
        format!("fixture gave ({:.6}, {:.6})", b.lower, b.upper),
    )?;
    Ok(format!(
        "{checked} truncations sandwiched; fixture ({:.6}, {:.6})",
        b.lower, b.upper
    ))
}

fn reference_key_tokens(hg: &[f64], hu: &[f64], alpha: f64, k: f64) -> (Vec<usize>, bool) {
    let mut picked = Vec::new();
    for i in 0..hg.len() {
        if (hg[i] - hu[i]).abs() > alpha {
            picked.push(i);
        }
    }
    if !picked.is_empty() {
        return (picked, false);
    }
    let n = hg.len();
    let count = ((k * n as f64 - 1e-9).ceil() as usize).max(1).min(n);
    // exhaustive: rank every position against every other
    let mut chosen: Vec<usize> = (0..n)
        .filter(|&i| {
            let ahead = (0..n).filter(|&j| hg[j] > hg[i] || (hg[j] == hg[i] && j < i)).count();
            ahead < count
        })
        .collect();
    chosen.sort();
    (chosen, true)
}

fn c3_key_tokens() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fallbacks = 0;
    for case in 0..10_000 {
        let n = rng.gen_range(1..=64);
        let alpha = [0.0, 0.05, 0.1, 0.5][rng.gen_range(0..4)];
        let k = [0.1, 0.25, 0.5, 1.0][rng.gen_range(0..4)];
        // small integer-ish grid so ties and sub-threshold traces are common
        let quiet = rng.gen_bool(0.3);
        let hg: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 * 0.25).collect();
        let hu: Vec<f64> = hg
            .iter()
            .map(|h| {
                if quiet {
                    h + rng.gen_range(-1..=1) as f64 * alpha * 0.5
                } else {
                    h + rng.gen_range(-4..=4) as f64 * 0.05
                }
            })
            .collect();
        let g: Vec<TokenScore> = hg.iter().map(|&h| TokenScore::exact(0, -0.1, h)).collect();
        let u: Vec<TokenScore> = hu.iter().map(|&h| TokenScore::exact(0, -0.1, h)).collect();
        let trace = GenerationTrace::new(vec!["t".into(); n], g, Some(u), "m").map_err(|e| e.to_string())?;
        let cfg = KeyTokenConfig { alpha, top_k_frac: k };
        let got = select_key_tokens(&trace, &cfg).map_err(|e| e.to_string())?;
        let (want, fb) = reference_key_tokens(&hg, &hu, alpha, k);
        ensure(
            got.indices == want && got.fallback == fb,
            format!(
                "case {case}: got {:?} ({}) want {want:?} ({fb})",
                got.indices, got.fallback
            ),
        )?;
        fallbacks += fb as usize;
    }
    ensure(fallbacks > 100, format!("fallback exercised only {fallbacks} times"))?;
    Ok(format!("10000 traces identical, {fallbacks} via fallback"))
}

fn gold_report(
    model: &dyn grogu::backend::LanguageModel,
    w: &NeedleWorld,
    idx: &InvertedIndex,
) -> Result<GoldReport, String> {
    let (cases, _) = build_gold_cases(&w.queries, idx, &Bm25Params::default(), 10, 11).map_err(|e| e.to_string())?;
    let cfg = ScoringConfig::default();
    let scorer = Scorer::new(model, &cfg);
    gold_win_rates(&cases, &ConfidenceFormulation::ALL, &scorer).map_err(|e| e.to_string())
}

fn c4_c5_gold(w: &NeedleWorld, idx: &InvertedIndex) -> (Check, Check) {
    let start = Instant::now();
    let lm = needle("needle", None);
    let report = match gold_report(&lm, w, idx) {
        Ok(r) => r,
        Err(e) => return (Err(e.clone()), Err(e)),
    };
    let elapsed = start.elapsed();
    let ke = report.win_rates_for(ConfidenceFormulation::KeyEntropy).unwrap();
    let en = report.win_rates_for(ConfidenceFormulation::Entropy).unwrap();
    let c4 = (|| {
        ensure(
            report.cases_scored == 200,
            format!("{} cases scored", report.cases_scored),
        )?;
        ensure(
            ke.vs_random.rate >= 95.0,
            format!("vs random {:.1}%", ke.vs_random.rate),
        )?;
        ensure(
            ke.vs_distractor.rate >= 90.0,
            format!("vs distractor {:.1}%", ke.vs_distractor.rate),
        )?;
        ensure(
            ke.vs_random.test.p_two_sided < 0.05 && ke.vs_distractor.test.p_two_sided < 0.05,
            "sign test not significant",
        )?;
        within(elapsed, 30.0)?;
        Ok(format!(
            "KeyEntropy gold/rand {:.1}% (p={:.1e}), gold/dist {:.1}% (p={:.1e}), {:.2}s",
            ke.vs_random.rate,
            ke.vs_random.test.p_two_sided,
            ke.vs_distractor.rate,
            ke.vs_distractor.test.p_two_sided,
            elapsed.as_secs_f64()
        ))
    })();
    let c5 = (|| {
        ensure(
            ke.vs_random.rate >= en.vs_random.rate - 2.0 && ke.vs_distractor.rate >= en.vs_distractor.rate - 2.0,
            format!(
                "KeyEntropy {:.1}/{:.1} vs Entropy {:.1}/{:.1}",
                ke.vs_random.rate, ke.vs_distractor.rate, en.vs_random.rate, en.vs_distractor.rate
            ),
        )?;
        Ok(format!(
            "KeyEntropy {:.1}/{:.1} vs Entropy {:.1}/{:.1} (rand/dist)",
            ke.vs_random.rate, ke.vs_distractor.rate, en.vs_random.rate, en.vs_distractor.rate
        ))
    })();
    (c4, c5)
}

fn util(v: f64) -> UtilityScore {
    UtilityScore {
        value: v,
        formulation: ConfidenceFormulation::KeyEntropy,
        grounded_confidence: v,
        ungrounded_confidence: None,
        mode: UtilityMode::GroundedOnly,
        key_token_indices: vec![],
        grounded_bounds: None,
    }
}

fn c6_concordance(w: &NeedleWorld, idx: &InvertedIndex) -> Check {
    // enumerate every (C, D) with C + D in 1..=8, over both orientations
    for c in 0..=8usize {
        for d in 0..=(8 - c) {
            if c + d == 0 {
                continue;
            }
            let mut cases = Vec::new();
            for i in 0..c + d {
                let correct_a = i % 2 == 0;
                let concordant = i < c;
                let (hi, lo) = (1.0, 0.0);
                let (ua, ub) = match (correct_a, concordant) {
                    (true, true) | (false, false) => (hi, lo),
                    _ => (lo, hi),
                };
                cases.push(ConcordanceCase {
                    qid: format!("{i}"),
                    context_a: Default::default(),
                    context_b: Default::default(),
                    correct_a,
                    correct_b: !correct_a,
                    utility_a: util(ua),
                    utility_b: util(ub),
                });
            }
            let r = concordance_tau(&cases, TiePolicy::Discordant).map_err(|e| e.to_string())?;
            let want = (c as f64 - d as f64) / (c + d) as f64;
            ensure(
                r.tau == want && r.concordant == c as f64 && r.discordant == d as f64,
                format!("C={c} D={d}: tau {} want {want}", r.tau),
            )?;
        }
    }
    let lm = needle("needle-w2", Some(2));
    let cfg = ScoringConfig::default();
    let scorer = Scorer::new(&lm, &cfg);
    let bm25 = Bm25Params::default();
    let (pairs, _) = build_concordance_pairs(&w.queries, idx, &bm25, &ConcordanceConfig::default(), 13)
        .map_err(|e| e.to_string())?;
    let report = score_concordance(
        &pairs,
        &[ConfidenceFormulation::KeyEntropy],
        &scorer,
        idx,
        &bm25,
        TiePolicy::Discordant,
    )
    .map_err(|e| e.to_string())?;
    let row = report.row("keyentropy").ok_or("no keyentropy row")?;
    ensure(row.result.tau > 0.5, format!("tau {:.3}", row.result.tau))?;
    Ok(format!(
        "enumerated cases exact; needle tau {:.3} (C={}, D={}, n={})",
        row.result.tau,
        row.result.concordant,
        row.result.discordant,
        report.per_case.len()
    ))
}

fn c7_layout(w: &NeedleWorld, idx: &InvertedIndex) -> Check {
    let strong = needle("needle-strong", None);
    let weak = needle("needle-weak", Some(5));
    let cfg = ScoringConfig::default();
    let (si, sj) = (Scorer::new(&strong, &cfg), Scorer::new(&weak, &cfg));
    let (cases, _) = build_layout_cases(&w.queries, idx, &Bm25Params::default()).map_err(|e| e.to_string())?;
    let r =
        layout_selection_eval(&si, &sj, &cases, ConfidenceFormulation::KeyEntropy, 17).map_err(|e| e.to_string())?;
    let (s, k) = (&r.model_i, &r.model_j);
    ensure(
        s.own >= s.random,
        format!("strong own {:.1} < random {:.1}", s.own, s.random),
    )?;
    ensure(
        k.own >= k.random,
        format!("weak own {:.1} < random {:.1}", k.own, k.random),
    )?;
    ensure(
        k.other <= k.own,
        format!("weak under strong picks {:.1} > own {:.1}", k.other, k.own),
    )?;
    Ok(format!(
        "strong own/other/rand {:.1}/{:.1}/{:.1}; weak {:.1}/{:.1}/{:.1} ({} cases)",
        s.own, s.other, s.random, k.own, k.other, k.random, r.cases_scored
    ))
}

fn c8_retrieval() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let q = rng.gen_range(1..20);
        let mut runs = Vec::new();
        let mut golds = Vec::new();
        for i in 0..q {
            let len = rng.gen_range(0..15);
            let mut ids: Vec<String> = (0..30).map(|d| format!("d{d}")).collect();
            // shuffle and cut
            for j in (1..ids.len()).rev() {
                ids.swap(j, rng.gen_range(0..=j));
            }
            ids.truncate(len);
            runs.push(RetrievalResult {
                qid: format!("{i}"),
                ranked: ids.into_iter().map(|d| (d, 0.0)).collect(),
                query_text_used: String::new(),
            });
            golds.push(format!("d{}", rng.gen_range(0..30)));
        }
        let k = rng.gen_range(1..12);
        let (mut rr, mut hits) = (0.0, 0usize);
        for (r, g) in runs.iter().zip(&golds) {
            for (pos, (d, _)) in r.ranked.iter().enumerate() {
                if d == g {
                    rr += 1.0 / (pos + 1) as f64;
                    if pos < k {
                        hits += 1;
                    }
                    break;
                }
            }
        }
        let want_mrr = rr / q as f64;
        let want_recall = hits as f64 / q as f64;
        ensure(mrr(&runs, &golds) == want_mrr, "MRR differs from linear scan")?;
        ensure(
            recall_at_k(&runs, &golds, k) == want_recall,
            "Recall@K differs from linear scan",
        )?;
    }
    let idx = InvertedIndex::build(
        vec![
            DocumentRecord::new("d1", "", "cat sat"),
            DocumentRecord::new("d2", "", "cat cat hat"),
            DocumentRecord::new("d3", "", "dog"),
        ],
        TokenizerConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let p = Bm25Params::default();
    let score = |t: &str, d: &str| bm25_score(&idx, &p, &[t.to_string()], d).unwrap();
    let got = [score("cat", "d2"), score("cat", "d1"), score("dog", "d3")];
    let want = [0.579875, 0.409637, 0.980829];
    let bad: Vec<String> = got
        .iter()
        .zip(&want)
        .zip(["d2", "d1", "d3"])
        .filter(|((g, w), _)| (*g - *w).abs() > 1e-6)
        .map(|((g, w), d)| format!("{d}: got {g:.6}, stated {w}"))
        .collect();
    ensure(
        bad.is_empty(),
        format!("MRR/Recall exact on 1000 runs; BM25 fixtures off: {}", bad.join("; ")),
    )?;
    Ok("MRR/Recall exact on 1000 runs; BM25 fixtures match".into())
}

fn binom_oracle(w: usize, l: usize) -> f64 {
    let n = w + l;
    let m = w.min(l);
    let mut sum = BigUint::zero();
    let mut c = BigUint::one();
    for i in 0..=m {
        if i > 0 {
            c = c * BigUint::from(n - i + 1) / BigUint::from(i);
        }
        sum += &c;
    }
    let num = sum * 2u32;
    let den = BigUint::one() << n;
    if num >= den {
        return 1.0;
    }
    // exact ratio to f64 by scaling
    let scaled = (num << 200u32) / den;
    scaled.to_f64().unwrap() / 2f64.powi(200)
}

fn c9_sign_test() -> Check {
    let mut worst = 0.0f64;
    for n in 1..=64usize {
        for w in 0..=n {
            let got = sign_test(w, n - w, 0).p_two_sided;
            let want = binom_oracle(w, n - w);
            worst = worst.max((got - want).abs());
        }
    }
    ensure(worst <= 1e-12, format!("max abs error {worst:e}"))?;
    let a = sign_test(8, 0, 0).p_two_sided;
    let b = sign_test(9, 1, 0).p_two_sided;
    ensure((a - 0.0078125).abs() <= 1e-12, format!("8/0 gave {a}"))?;
    ensure((b - 0.021484).abs() <= 1e-6, format!("9/1 gave {b}"))?;
    Ok(format!("n<=64 max abs err {worst:.1e}; 8/0 -> {a}, 9/1 -> {b:.6}"))
}

fn prefs_bytes(w: &NeedleWorld, idx: &InvertedIndex) -> Result<(Vec<u8>, Vec<u8>, usize, usize), String> {
    let lm = needle("needle", None);
    let cfg = ScoringConfig::default();
    let scorer = Scorer::new(&lm, &cfg);
    let pc = PrefConfig::default();
    let (scores, _, _) =
        score_rewrite_sets(&w.rewrites, idx, &Bm25Params::default(), &scorer, &pc, None).map_err(|e| e.to_string())?;
    let (sft, _) = build_sft_records(&scores);
    let (pairs, _) = build_dpo_pairs(&scores);
    for (q, s) in scores.iter().zip(&sft) {
        let max = q.scores.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        ensure(s.score == max, format!("{}: SFT target is not the argmax", q.qid))?;
    }
    for p in &pairs {
        let q = scores.iter().find(|q| q.qid == p.qid).unwrap();
        let max = q.scores.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let min = q.scores.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        ensure(
            p.chosen_score == max && p.rejected_score == min && p.gap > 0.0,
            format!("{}: bad pair", p.qid),
        )?;
    }
    let zero_gap = scores
        .iter()
        .filter(|q| {
            let v: Vec<f64> = q.scores.iter().map(|x| x.1).collect();
            v.iter().all(|&x| x == v[0])
        })
        .count();
    ensure(
        pairs.len() + zero_gap == scores.len(),
        "zero-gap questions not skipped exactly",
    )?;
    let kept = filter_by_gap(&pairs, pc.keep_fraction);
    ensure(
        kept.len() == keep_count(pairs.len(), pc.keep_fraction),
        "filter cardinality",
    )?;
    ensure(kept.len() == pairs.len().div_ceil(2), "filter keeps ceil(N/2)")?;
    let sft_bytes = grogu::io::to_jsonl_bytes(&sft).map_err(|e| e.to_string())?;
    let dpo_bytes = grogu::io::to_jsonl_bytes(&kept).map_err(|e| e.to_string())?;
    Ok((sft_bytes, dpo_bytes, pairs.len(), zero_gap))
}

fn c10_prefs(w: &NeedleWorld, idx: &InvertedIndex) -> Check {
    let start = Instant::now();
    let first = prefs_bytes(w, idx)?;
    within(start.elapsed(), 10.0)?;
    let second = prefs_bytes(w, idx)?;
    ensure(first.0 == second.0 && first.1 == second.1, "two runs differ")?;
    Ok(format!(
        "{} pairs ({} zero-gap skipped), filtered to {}, byte-identical reruns",
        first.2,
        first.3,
        first.1.iter().filter(|&&b| b == b'\n').count()
    ))
}

fn c11_trace(w: &NeedleWorld, idx: &InvertedIndex) -> Check {
    let store = Arc::new(TraceStore::in_memory());
    let rec = TraceRecorder::new(needle("needle", None), store.clone());
    let live = gold_report(&rec, w, idx)?;
    let replay = TraceReplay::new("needle", store.clone());
    let again = gold_report(&replay, w, idx)?;
    let bits = |r: &GoldReport| -> Vec<u64> {
        r.per_case
            .iter()
            .flat_map(|c| c.rows.iter().flat_map(|x| [x.gold, x.distractor, x.random]))
            .map(f64::to_bits)
            .collect()
    };
    ensure(bits(&live) == bits(&again), "replayed utilities differ")?;
    ensure(live == again, "replayed reports differ")?;
    Ok(format!(
        "{} rows recorded, {} utilities bit-identical on replay",
        store.len(),
        bits(&live).len()
    ))
}

fn main() {
    let w = world();
    let idx = index_of(&w);
    let (c4, c5) = c4_c5_gold(&w, &idx);
    let results: Vec<(&str, Check)> = vec![
        ("1 entropy correctness", c1_entropy()),
        ("2 entropy bounds", c2_bounds()),
        ("3 key-token oracle equivalence", c3_key_tokens()),
        ("4 gold identification", c4),
        ("5 KeyEntropy >= Entropy", c5),
        ("6 concordance", c6_concordance(&w, &idx)),
        ("7 layout selection", c7_layout(&w, &idx)),
        ("8 retrieval metrics", c8_retrieval()),
        ("9 sign test", c9_sign_test()),
        ("10 preference pipeline", c10_prefs(&w, &idx)),
        ("11 trace fidelity", c11_trace(&w, &idx)),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
