use std::collections::HashSet;

use distsa::streams::{split, SplitPlan, SyntheticStream};

#[test]
fn split_mapping_is_a_bijection_onto_kept_indices() {
    for nodes in [2usize, 4, 8] {
        for minibatch in (nodes..=64).step_by(nodes) {
            for mu in [0usize, 1, 5] {
                let plan = SplitPlan::new(minibatch, nodes, mu).unwrap();
                let iterations = 20u64;
                let mut seen = HashSet::new();
                for t in 1..=iterations {
                    for n in 1..=nodes {
                        for b in 1..=plan.local_batch() {
                            let idx = split(&plan, t, n, b).unwrap();
                            assert!(seen.insert(idx), "index {idx} hit twice");
                        }
                    }
                }
                let block = (minibatch + mu) as u64;
                let kept: HashSet<u64> = (1..=iterations * block)
                    .filter(|i| (i - 1) % block < minibatch as u64)
                    .collect();
                assert_eq!(seen, kept, "B = {minibatch}, N = {nodes}, mu = {mu}");
            }
        }
    }
}

#[test]
fn per_node_substreams_agree() {
    let stream = SyntheticStream::logistic_gaussian(3, 21).unwrap();
    let plan = SplitPlan::new(40, 4, 3).unwrap();
    let iterations = 500u64;
    let mut stats = Vec::new();
    for n in 1..=4 {
        let xs: Vec<f64> = (1..=iterations)
            .flat_map(|t| (1..=plan.local_batch()).map(move |b| (t, b)))
            .map(|(t, b)| stream.generate(plan.index(t, n, b).unwrap()).unwrap().features[0])
            .collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        stats.push((m, (var / xs.len() as f64).sqrt()));
    }
    for (i, a) in stats.iter().enumerate() {
        for b in &stats[i + 1..] {
            let se = (a.1 * a.1 + b.1 * b.1).sqrt();
            assert!((a.0 - b.0).abs() <= 4.0 * se);
        }
    }
}

#[test]
fn seeds_separate_and_reproduce_streams() {
    let a = SyntheticStream::logistic_gaussian(4, 1).unwrap();
    let b = SyntheticStream::logistic_gaussian(4, 1).unwrap();
    let c = SyntheticStream::logistic_gaussian(4, 2).unwrap();
    for i in [1u64, 17, 1_000_000] {
        assert_eq!(a.generate(i).unwrap(), b.generate(i).unwrap());
        assert_ne!(a.generate(i).unwrap(), c.generate(i).unwrap());
    }
}
