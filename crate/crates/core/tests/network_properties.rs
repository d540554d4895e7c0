use distsa::network::{all_reduce, build_topology, NetworkModel, NodeVectors, TopologyKind, WeightRule};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn topology() -> impl Strategy<Value = NetworkModel> {
    (0usize..4, 3usize..20, any::<u64>(), any::<bool>()).prop_filter_map("invalid degree", |(k, n, seed, uniform)| {
        let rule = if uniform { WeightRule::Uniform } else { WeightRule::Metropolis };
        let (kind, degree) = match k {
            0 => (TopologyKind::Star, None),
            1 => (TopologyKind::Ring, None),
            2 => (TopologyKind::Complete, None),
            _ => (TopologyKind::KRegularRandom, Some(if n % 2 == 0 { 3 } else { 4 })),
        };
        build_topology(kind, n, degree, seed, rule).ok()
    })
}

fn random_vectors(n: usize, d: usize, seed: u64) -> NodeVectors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-10.0..10.0)).collect()).collect()
}

fn mean(vecs: &NodeVectors) -> Vec<f64> {
    let n = vecs.len() as f64;
    (0..vecs[0].len()).map(|j| vecs.iter().map(|v| v[j]).sum::<f64>() / n).collect()
}

fn deviation(vecs: &NodeVectors) -> f64 {
    let m = mean(vecs);
    vecs.iter()
        .flat_map(|v| v.iter().zip(&m).map(|(a, b)| (a - b).powi(2)))
        .sum::<f64>()
        .sqrt()
}

proptest! {
    #[test]
    fn weights_are_valid(net in topology()) {
        prop_assert!(net.validate(1e-12).is_ok());
        let a = net.weights();
        let n = net.nodes();
        for i in 0..n {
            prop_assert!((a.row(i).sum() - 1.0).abs() <= 1e-12);
            prop_assert!((a.column(i).sum() - 1.0).abs() <= 1e-12);
            for j in 0..n {
                prop_assert_eq!(a[(i, j)], a[(j, i)]);
                let linked = i == j || net.edges().iter().any(|&(x, y)| (x, y) == (i, j) || (x, y) == (j, i));
                if !linked {
                    prop_assert_eq!(a[(i, j)], 0.0);
                }
            }
        }
        prop_assert!(net.lambda2() < 1.0);
    }

    #[test]
    fn consensus_preserves_the_mean(net in topology(), seed in any::<u64>()) {
        let mut vecs = random_vectors(net.nodes(), 3, seed);
        for _ in 0..10 {
            let before = mean(&vecs);
            vecs = net.consensus_round(&vecs).unwrap();
            for (a, b) in before.iter().zip(mean(&vecs)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn all_reduce_is_bitwise_identical(n in 1usize..40, seed in any::<u64>()) {
        let out = all_reduce(&random_vectors(n, 4, seed)).unwrap();
        for v in &out {
            prop_assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), out[0].iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }
}

#[test]
fn ring_deviation_decays_at_lambda2() {
    let net = build_topology(TopologyKind::Ring, 16, None, 0, WeightRule::Metropolis).unwrap();
    let mut vecs = random_vectors(16, 1, 5);
    let mut ratios = Vec::new();
    for _ in 0..20 {
        let before = deviation(&vecs);
        vecs = net.consensus_round(&vecs).unwrap();
        ratios.push(deviation(&vecs) / before);
    }
    let last = *ratios.last().unwrap();
    assert!((last - net.lambda2()).abs() <= 0.05 * net.lambda2(), "{last} vs {}", net.lambda2());
}
