use distsa::losses::{krasulina_direction, pca_excess_risk, LossKind, LossModel, SpectrumSpec};
use distsa::streams::{Sample, SyntheticStream};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

#[test]
fn convexity_midpoint_tuples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in [LossKind::Logistic, LossKind::Hinge] {
        for _ in 0..1000 {
            let d = rng.random_range(1..=20);
            let model = LossModel::new(kind, d).unwrap();
            let w1 = gaussian(&mut rng, d + 1, 3.0);
            let w2 = gaussian(&mut rng, d + 1, 3.0);
            let z = Sample::labeled(gaussian(&mut rng, d, 1.0), if rng.random::<bool>() { 1 } else { -1 });
            let a: f64 = rng.random();
            let mid: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + (1.0 - a) * y).collect();
            let lhs = model.loss(&mid, &z).unwrap();
            let rhs = a * model.loss(&w1, &z).unwrap() + (1.0 - a) * model.loss(&w2, &z).unwrap();
            assert!(lhs <= rhs + 1e-12, "{kind:?}: {lhs} > {rhs}");
        }
    }
}

#[test]
fn logistic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let d = rng.random_range(1..=20);
        let model = LossModel::new(LossKind::Logistic, d).unwrap();
        let w = gaussian(&mut rng, d + 1, 1.0);
        let z = Sample::labeled(gaussian(&mut rng, d, 1.0), if rng.random::<bool>() { 1 } else { -1 });
        let g = model.gradient(&w, &z).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..=d)
            .map(|i| {
                let mut plus = w.clone();
                let mut minus = w.clone();
                plus[i] += h;
                minus[i] -= h;
                (model.loss(&plus, &z).unwrap() - model.loss(&minus, &z).unwrap()) / (2.0 * h)
            })
            .collect();
        let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err <= 1e-6 * norm.max(1e-3), "relative error {}", err / norm);
    }
}

proptest! {
    #[test]
    fn krasulina_direction_is_orthogonal_and_norms_grow(seed in any::<u64>(), d in 2usize..12, eta in 0.001..10.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = gaussian(&mut rng, d, 1.0);
        let mut norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..50 {
            let z = gaussian(&mut rng, d, 1.0);
            let xi = krasulina_direction(&w, &z).unwrap();
            let dot: f64 = w.iter().zip(&xi).map(|(a, b)| a * b).sum();
            let xi_norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(dot.abs() <= 1e-10 * norm * xi_norm + f64::MIN_POSITIVE);
            for (wi, x) in w.iter_mut().zip(&xi) {
                *wi += eta * x;
            }
            let next = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(next >= norm * (1.0 - 1e-12));
            norm = next;
        }
    }

    #[test]
    fn pca_excess_risk_is_scale_invariant(seed in any::<u64>(), c in prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = SpectrumSpec::linear_decay(10, 1.0, 0.1, 0.1).unwrap();
        let basis = DMatrix::<f64>::identity(10, 10);
        let w = gaussian(&mut rng, 10, 1.0);
        let scaled: Vec<f64> = w.iter().map(|x| c * x).collect();
        let a = pca_excess_risk(&spec, &basis, &w).unwrap();
        let b = pca_excess_risk(&spec, &basis, &scaled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn projection_stays_in_ball(seed in any::<u64>(), radius in 0.1..50.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = LossModel::new(LossKind::Logistic, 4).unwrap().with_expanse(radius).unwrap();
        let mut w = gaussian(&mut rng, 5, 40.0);
        model.project(&mut w);
        prop_assert!(w.iter().map(|x| x * x).sum::<f64>().sqrt() <= radius);
    }
}

#[test]
fn mean_gradient_variance_scales_inversely_with_batch() {
    let stream = SyntheticStream::logistic_gaussian(5, 3).unwrap();
    let model = LossModel::new(LossKind::Logistic, 5).unwrap();
    let w = vec![0.1; 6];
    let batches = 2000u64;
    let trace_variance = |b: u64, offset: u64| -> f64 {
        let means: Vec<Vec<f64>> = (0..batches)
            .map(|k| {
                let mut acc = vec![0.0; 6];
                for i in 1..=b {
                    let z = stream.generate(offset + k * b + i).unwrap();
                    model.accumulate_gradient(&w, &z, 1.0 / b as f64, &mut acc).unwrap();
                }
                acc
            })
            .collect();
        (0..6)
            .map(|j| {
                let m = means.iter().map(|g| g[j]).sum::<f64>() / batches as f64;
                means.iter().map(|g| (g[j] - m).powi(2)).sum::<f64>() / (batches - 1) as f64
            })
            .sum()
    };
    let sigma2 = trace_variance(1, 0);
    for (b, offset) in [(10u64, 1_000_000u64), (100, 2_000_000)] {
        let ratio = trace_variance(b, offset) * b as f64 / sigma2;
        assert!((ratio - 1.0).abs() <= 0.2, "B = {b}: ratio {ratio}");
    }
}
