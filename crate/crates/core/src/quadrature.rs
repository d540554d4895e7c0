//! Gauss-Hermite quadrature and the closed-form-up-to-quadrature risk of
//! logistic regression under Gaussian designs.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::losses::{logistic, softplus};
use crate::{dot, norm2};

/// Nodes and weights for `E[f(Z)] ≈ Σ wᵢ f(xᵢ)`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub-Welsch: eigen-decomposition of the Jacobi matrix of the
    /// physicists' Hermite polynomials, rescaled to the standard normal.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one node");
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let off = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = off;
            jacobi[(k, k - 1)] = off;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (std::f64::consts::SQRT_2 * eig.eigenvalues[i], v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

fn rule_1d() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(200))
}

fn rule_2d() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(64))
}

/// Expected logistic loss `½ Σ_y E[softplus(−y·m)]` when
/// `x | y ~ N(μ_y, σ_x² I)` with equiprobable labels.
pub fn conditional_gaussian_risk(w: &[f64], mean_neg: &[f64], mean_pos: &[f64], sigma_x2: f64) -> f64 {
    let (w0, wt) = w.split_last().expect("augmented model is nonempty");
    let spread = (sigma_x2 * norm2(wt)).sqrt();
    let rule = rule_1d();
    let pos = dot(wt, mean_pos) + w0;
    let neg = dot(wt, mean_neg) + w0;
    0.5 * (rule.expect(|z| softplus(-(pos + spread * z))) + rule.expect(|z| softplus(neg + spread * z)))
}

/// Bayes-optimal augmented model for the conditional Gaussian stream.
pub fn conditional_gaussian_optimum(mean_neg: &[f64], mean_pos: &[f64], sigma_x2: f64) -> Vec<f64> {
    let mut w: Vec<f64> = mean_pos
        .iter()
        .zip(mean_neg)
        .map(|(p, n)| (p - n) / sigma_x2)
        .collect();
    w.push((norm2(mean_neg) - norm2(mean_pos)) / (2.0 * sigma_x2));
    w
}

/// Excess logistic risk `E_x[KL(Ber(σ(m*)) ‖ Ber(σ(m)))]` for
/// `x ~ N(0, I)` labelled by the logistic model `w*`.
pub fn logistic_gaussian_excess_risk(w: &[f64], w_star: &[f64]) -> f64 {
    let (w0, wt) = w.split_last().expect("augmented model is nonempty");
    let (s0, st) = w_star.split_last().expect("augmented model is nonempty");
    let var_star = norm2(st);
    let cov = dot(wt, st);
    let var = norm2(wt);
    let (load_star, load_cross, load_free) = if var_star > 0.0 {
        let sd = var_star.sqrt();
        (sd, cov / sd, (var - cov * cov / var_star).max(0.0).sqrt())
    } else {
        (0.0, 0.0, var.sqrt())
    };
    let rule = rule_2d();
    let mut total = 0.0;
    for (z1, p1) in rule.nodes.iter().zip(&rule.weights) {
        let ms = s0 + load_star * z1;
        let p = logistic(ms);
        let base_neg = softplus(-ms);
        let base_pos = softplus(ms);
        let mut inner = 0.0;
        for (z2, p2) in rule.nodes.iter().zip(&rule.weights) {
            let m = w0 + load_cross * z1 + load_free * z2;
            let kl = p * (softplus(-m) - base_neg) + (1.0 - p) * (softplus(m) - base_pos);
            inner += p2 * kl;
        }
        total += p1 * inner;
    }
    total.max(0.0)
}
