use grogu::backend::{GroundingContext, NeedleLm, NeedleLmParams};
use grogu::eval::stats::concordance_from_diffs;
use grogu::eval::{query_rng, sign_test, TiePolicy};
use grogu::metric::{ConfidenceFormulation, UtilityMode};
use grogu::retrieval::DocumentRecord;
use grogu::scoring::{Scorer, ScoringConfig};
use proptest::prelude::*;
use rand::Rng;

fn diffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::sample::select(vec![-1.0, -0.5, 0.0, 0.5, 1.0]), 1..60)
}

fn ties() -> impl Strategy<Value = TiePolicy> {
    prop::sample::select(vec![TiePolicy::Discordant, TiePolicy::Split])
}

proptest! {
    #[test]
    fn tau_lies_in_unit_interval(d in diffs(), t in ties()) {
        let r = concordance_from_diffs(&d, t).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r.tau));
        prop_assert_eq!(r.tau == 1.0, r.discordant == 0.0 && r.concordant > 0.0);
        prop_assert_eq!(r.tau == -1.0, r.concordant == 0.0 && r.discordant > 0.0);
        prop_assert_eq!(r.ties, d.iter().filter(|x| **x == 0.0).count());
    }

    #[test]
    fn sign_test_is_symmetric_and_ignores_ties(w in 0usize..80, l in 0usize..80, t in 0usize..20) {
        let a = sign_test(w, l, t);
        let b = sign_test(l, w, 0);
        prop_assert!((0.0..=1.0).contains(&a.p_two_sided));
        prop_assert!((a.p_two_sided - b.p_two_sided).abs() < 1e-12);
        prop_assert_eq!((a.wins, a.losses, a.ties), (w, l, t));
    }

    #[test]
    fn query_rng_depends_only_on_its_inputs(seed in any::<u64>(), qid in "[a-z0-9]{1,8}") {
        let a: u64 = query_rng(seed, &qid, "random").gen();
        let b: u64 = query_rng(seed, &qid, "random").gen();
        let c: u64 = query_rng(seed, &qid, "placement").gen();
        prop_assert_eq!(a, b);
        prop_assert_ne!(a, c);
    }

    #[test]
    fn visible_gold_beats_random(
        window in 1usize..6,
        gold_at in 0usize..6,
        f in prop::sample::select(ConfidenceFormulation::ALL.to_vec()),
        full in any::<bool>(),
    ) {
        prop_assume!(gold_at < window);
        let m = NeedleLm::new("n", NeedleLmParams { window: Some(window), ..Default::default() }).unwrap();
        let cfg = ScoringConfig { mode: if full { UtilityMode::Full } else { UtilityMode::GroundedOnly }, ..Default::default() };
        let scorer = Scorer::new(&m, &cfg);
        let ctx = |gold: bool| {
            GroundingContext::new(
                (0..6)
                    .map(|i| {
                        let text = if gold && i == gold_at { "zorvath is red oak.".to_string() } else { format!("filler {i}") };
                        DocumentRecord::new(format!("d{i}"), "", text)
                    })
                    .collect(),
            )
        };
        let q = "what is zorvath?";
        let (g, _) = scorer.score(q, &[], &ctx(true), f).unwrap();
        let (r, _) = scorer.score(q, &[], &ctx(false), f).unwrap();
        prop_assert!(g.value > r.value, "{} <= {}", g.value, r.value);
    }
}

#[test]
fn sign_test_matches_binomial_tail() {
    // 9 wins, 1 loss: P = 2 * (C(10,0) + C(10,1)) / 2^10
    let r = sign_test(9, 1, 3);
    approx::assert_abs_diff_eq!(r.p_two_sided, 2.0 * 11.0 / 1024.0, epsilon = 1e-15);
    assert_eq!(sign_test(5, 5, 0).p_two_sided, 1.0);
}

#[test]
fn tau_with_only_ties_follows_policy() {
    assert!(concordance_from_diffs(&[0.0, 0.0], TiePolicy::Split).is_ok());
    assert_eq!(
        concordance_from_diffs(&[0.0, 0.0], TiePolicy::Discordant).unwrap().tau,
        -1.0
    );
    assert!(concordance_from_diffs(&[], TiePolicy::Split).is_err());
}
