use grogu::metric::{
    confidence, entropy_bounds, grogu, select_key_tokens, token_entropy, ConfidenceFormulation, GenerationTrace,
    KeyTokenConfig, TokenDistribution, TokenScore, UtilityMode,
};
use proptest::prelude::*;

fn probs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-4f64..1.0, 2..60).prop_map(|w| {
        let t: f64 = w.iter().sum();
        w.iter().map(|x| x / t).collect()
    })
}

fn scores(hs: &[f64]) -> Vec<TokenScore> {
    hs.iter().map(|&h| TokenScore::exact(0, -0.5 * h - 0.01, h)).collect()
}

fn trace(hg: &[f64], hu: &[f64]) -> GenerationTrace {
    GenerationTrace::new(vec!["t".into(); hg.len()], scores(hg), Some(scores(hu)), "m").unwrap()
}

fn entropies() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..5.0, n),
            prop::collection::vec(0.0f64..5.0, n),
        )
    })
}

proptest! {
    #[test]
    fn truncation_bounds_sandwich_exact_entropy(p in probs(), k in 1usize..60) {
        let full = TokenDistribution::full(&p).unwrap();
        let exact = token_entropy(&full).unwrap();
        let b = entropy_bounds(&full.truncate_top_k(k).unwrap()).unwrap();
        prop_assert!(b.lower <= exact + 1e-12, "{} > {exact}", b.lower);
        prop_assert!(exact <= b.upper + 1e-12, "{exact} > {}", b.upper);
    }

    #[test]
    fn full_distribution_bounds_collapse(p in probs()) {
        let full = TokenDistribution::full(&p).unwrap();
        let b = entropy_bounds(&full).unwrap();
        prop_assert!((b.upper - b.lower).abs() < 1e-12);
    }

    #[test]
    fn raising_alpha_never_adds_key_tokens((hg, hu) in entropies(), a in 0.0f64..2.0, d in 0.0f64..2.0) {
        let t = trace(&hg, &hu);
        let lo = select_key_tokens(&t, &KeyTokenConfig::new(a, 0.1).unwrap()).unwrap();
        let hi = select_key_tokens(&t, &KeyTokenConfig::new(a + d, 0.1).unwrap()).unwrap();
        if !hi.fallback {
            prop_assert!(!lo.fallback);
            prop_assert!(hi.indices.iter().all(|i| lo.indices.contains(i)));
        }
    }

    #[test]
    fn key_tokens_are_sorted_unique_and_nonempty((hg, hu) in entropies(), a in 0.0f64..3.0, k in 0.01f64..1.0) {
        let s = select_key_tokens(&trace(&hg, &hu), &KeyTokenConfig::new(a, k).unwrap()).unwrap();
        prop_assert!(!s.indices.is_empty());
        prop_assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*s.indices.last().unwrap() < hg.len());
    }

    #[test]
    fn shared_ungrounded_term_keeps_ordering(
        (ga, ua) in entropies(),
        (gb, _) in entropies(),
        f in prop::sample::select(ConfidenceFormulation::ALL.to_vec()),
    ) {
        let cfg = KeyTokenConfig::default();
        let a = trace(&ga, &ua);
        // one bare-question confidence serves both contexts
        let b = trace(&gb, &gb.iter().map(|h| h + 1.0).collect::<Vec<_>>());
        let shared = confidence(&a, f, &cfg).unwrap();
        let ca = confidence(&a, f, &cfg).unwrap();
        let cb = confidence(&b, f, &cfg).unwrap();
        let only = |c| grogu(c, None, UtilityMode::GroundedOnly).unwrap().value;
        let full = |c| grogu(c, Some(shared.clone()), UtilityMode::Full).unwrap().value;
        let o = only(ca.clone()).partial_cmp(&only(cb.clone())).unwrap();
        let u = full(ca).partial_cmp(&full(cb)).unwrap();
        prop_assert_eq!(o, u);
    }

    #[test]
    fn utility_is_deterministic((hg, hu) in entropies(), f in prop::sample::select(ConfidenceFormulation::ALL.to_vec())) {
        let cfg = KeyTokenConfig::default();
        let t = trace(&hg, &hu);
        let a = grogu(confidence(&t, f, &cfg).unwrap(), None, UtilityMode::GroundedOnly).unwrap();
        let b = grogu(confidence(&t.clone(), f, &cfg).unwrap(), None, UtilityMode::GroundedOnly).unwrap();
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
        prop_assert_eq!(a.key_token_indices, b.key_token_indices);
    }
}

#[test]
fn fixture_distribution_bounds() {
    let d = TokenDistribution::new(vec![(0, 0.9)], 0.1, 10).unwrap();
    let b = entropy_bounds(&d).unwrap();
    // lower: residual lumped on one token; upper: spread over the other nine
    let lower = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
    let upper = lower + 0.1 * 9f64.ln();
    approx::assert_abs_diff_eq!(b.lower, lower, epsilon = 1e-12);
    approx::assert_abs_diff_eq!(b.upper, upper, epsilon = 1e-12);
}

#[test]
fn full_mode_subtracts_ungrounded_confidence() {
    let cfg = KeyTokenConfig::default();
    let t = trace(&[0.2, 0.4], &[1.0, 1.0]);
    let g = confidence(&t, ConfidenceFormulation::Entropy, &cfg).unwrap();
    let bare = trace(&[1.0, 1.0], &[1.0, 1.0]);
    let u = confidence(&bare, ConfidenceFormulation::Entropy, &cfg).unwrap();
    let s = grogu(g.clone(), Some(u.clone()), UtilityMode::Full).unwrap();
    approx::assert_abs_diff_eq!(s.value, g.value - u.value, epsilon = 1e-15);
    assert!(grogu(g, None, UtilityMode::Full).is_err());
}
