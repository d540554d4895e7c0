use distsa::rates::{
    discarded_per_iteration, dsgd_noise_moments, effective_rate, max_rounds, BoundEvaluator, SystemRates,
};
use proptest::prelude::*;

fn rates() -> impl Strategy<Value = SystemRates> {
    (1e2..1e7f64, 1e2..1e6f64, 1e1..1e5f64, 1usize..64, 1usize..100, 1usize..50).prop_map(
        // Even local batches so that doubling N keeps B divisible.
        |(rs, rp, rc, n, local, r)| SystemRates::new(rs, rp, rc, n, 2 * n * local, r).unwrap(),
    )
}

fn seconds(r: &SystemRates, rounds: usize) -> f64 {
    r.minibatch as f64 / (r.nodes as f64 * r.processing_rate) + rounds as f64 / r.messaging_rate
}

proptest! {
    #[test]
    fn effective_rate_is_monotone(r in rates()) {
        let base = effective_rate(&r);
        prop_assert!(effective_rate(&r.with_minibatch(r.minibatch + r.nodes)) < base);
        prop_assert!(effective_rate(&r.with_rounds(r.rounds + 1)) < base);
        let more_nodes = SystemRates::new(r.streaming_rate, r.processing_rate, r.messaging_rate, r.nodes * 2, r.minibatch, r.rounds).unwrap();
        prop_assert!(effective_rate(&more_nodes) > base);
        let faster_rp = SystemRates::new(r.streaming_rate, r.processing_rate * 2.0, r.messaging_rate, r.nodes, r.minibatch, r.rounds).unwrap();
        prop_assert!(effective_rate(&faster_rp) > base);
        let faster_rc = SystemRates::new(r.streaming_rate, r.processing_rate, r.messaging_rate * 2.0, r.nodes, r.minibatch, r.rounds).unwrap();
        prop_assert!(effective_rate(&faster_rc) > base);
    }

    #[test]
    fn max_rounds_matches_direct_search(r in rates()) {
        let budget = max_rounds(&r);
        let limit = r.minibatch as f64 / r.streaming_rate;
        let fits = |k: usize| seconds(&r, k) <= limit;
        let direct = (0..=budget.rounds + 1).filter(|&k| fits(k)).max();
        if r.nodes as f64 * r.processing_rate <= r.streaming_rate {
            prop_assert!(!budget.feasible);
            prop_assert_eq!(direct, None);
        } else {
            prop_assert_eq!(direct, Some(budget.rounds));
            prop_assert!(!fits(budget.rounds + 1));
            prop_assert_eq!(budget.feasible, budget.rounds >= 1);
        }
    }

    #[test]
    fn discard_is_zero_exactly_when_keeping_pace(r in rates()) {
        let keeps_pace = r.streaming_rate <= r.minibatch as f64 * effective_rate(&r);
        prop_assert_eq!(discarded_per_iteration(&r) == 0, keeps_pace);
    }

    #[test]
    fn exact_averaging_noise_moments(sigma2 in 0.01..10.0f64, n in 1usize..32, local in 1usize..50, r in 1usize..20, t in 1u64..10_000) {
        let be = BoundEvaluator {
            lambda2: 0.0,
            sigma2,
            lipschitz: 1.0,
            expanse: 1.0,
            minibatch: n * local,
            nodes: n,
            rounds: r,
            t,
            eta: 0.1,
        };
        let m = dsgd_noise_moments(&be, false).unwrap();
        let expected = 4.0 * sigma2 / (n * local) as f64;
        prop_assert!((m.variance - expected).abs() <= 1e-12 * expected);
        prop_assert_eq!(m.bias, 0.0);
    }
}

#[test]
fn noise_moments_are_monotone_on_a_grid() {
    for accelerated in [false, true] {
        for &lambda2 in &[0.1, 0.5, 0.9] {
            for &n in &[2usize, 8, 16] {
                let be = |rounds: usize, t: u64| BoundEvaluator {
                    lambda2,
                    sigma2: 1.0,
                    lipschitz: 1.0,
                    expanse: 1.0,
                    minibatch: 4 * n,
                    nodes: n,
                    rounds,
                    t,
                    eta: 1e-3,
                };
                for t in [1u64, 2, 5, 10] {
                    let mut prev = dsgd_noise_moments(&be(1, t), accelerated).unwrap();
                    for rounds in 2..40 {
                        let m = dsgd_noise_moments(&be(rounds, t), accelerated).unwrap();
                        assert!(m.variance <= prev.variance && m.bias <= prev.bias, "R = {rounds}");
                        prev = m;
                    }
                }
                for rounds in [1usize, 5, 20] {
                    let mut prev = dsgd_noise_moments(&be(rounds, 1), accelerated).unwrap();
                    for t in 2..12 {
                        let m = dsgd_noise_moments(&be(rounds, t), accelerated).unwrap();
                        assert!(m.variance >= prev.variance && m.bias >= prev.bias, "t = {t}");
                        prev = m;
                    }
                }
            }
        }
    }
}
