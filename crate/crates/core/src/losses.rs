//! Loss functions, (pseudo-)gradients, projections and risk evaluators.
//!
//! Supervised models use the augmented layout `w = (w̃, w₀)`: the intercept
//! is the last coordinate and features are implicitly extended by a 1.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::streams::Sample;
use crate::{dot, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Logistic,
    Hinge,
    PcaKrasulina,
}

impl LossKind {
    pub fn is_supervised(self) -> bool {
        !matches!(self, LossKind::PcaKrasulina)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossModel {
    pub kind: LossKind,
    /// Feature dimension `d`.
    pub dim: usize,
    pub smoothness: Option<f64>,
    pub noise_variance: f64,
    pub data_bound: Option<f64>,
    /// Radius of the model ball; `None` means unconstrained.
    pub expanse: Option<f64>,
}

impl LossModel {
    pub fn new(kind: LossKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        Ok(Self {
            kind,
            dim,
            smoothness: None,
            noise_variance: 0.0,
            data_bound: None,
            expanse: None,
        })
    }

    pub fn with_expanse(mut self, expanse: f64) -> Result<Self> {
        if self.kind == LossKind::PcaKrasulina {
            return Err(Error::invalid("Krasulina iterates are unconstrained"));
        }
        if !(expanse.is_finite() && expanse > 0.0) {
            return Err(Error::invalid(format!("expanse must be positive, got {expanse}")));
        }
        self.expanse = Some(expanse);
        Ok(self)
    }

    /// Length of the model vector: `d + 1` for supervised kinds.
    pub fn param_dim(&self) -> usize {
        if self.kind.is_supervised() {
            self.dim + 1
        } else {
            self.dim
        }
    }

    fn check(&self, w: &[f64], z: &Sample) -> Result<()> {
        if w.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                got: w.len(),
            });
        }
        if z.features.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: z.features.len(),
            });
        }
        Ok(())
    }

    fn label(&self, z: &Sample) -> Result<f64> {
        z.label.map(f64::from).ok_or(Error::MissingLabel)
    }

    pub fn loss(&self, w: &[f64], z: &Sample) -> Result<f64> {
        self.check(w, z)?;
        match self.kind {
            LossKind::Logistic => Ok(softplus(-self.label(z)? * margin(w, &z.features))),
            LossKind::Hinge => Ok((1.0 - self.label(z)? * margin(w, &z.features)).max(0.0)),
            LossKind::PcaKrasulina => {
                let nw = norm2(w);
                if nw == 0.0 {
                    return Err(Error::ZeroNorm);
                }
                let p = dot(w, &z.features);
                Ok(-p * p / nw)
            }
        }
    }

    /// Gradient (subgradient for hinge; Krasulina direction for PCA).
    pub fn gradient(&self, w: &[f64], z: &Sample) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.param_dim()];
        self.accumulate_gradient(w, z, 1.0, &mut out)?;
        Ok(out)
    }

    /// `acc += weight · gradient(w, z)` without allocating.
    pub fn accumulate_gradient(&self, w: &[f64], z: &Sample, weight: f64, acc: &mut [f64]) -> Result<()> {
        self.check(w, z)?;
        if acc.len() != w.len() {
            return Err(Error::DimensionMismatch {
                expected: w.len(),
                got: acc.len(),
            });
        }
        let x = &z.features;
        let coef = match self.kind {
            LossKind::Logistic => {
                let y = self.label(z)?;
                -y * logistic(-y * margin(w, x))
            }
            LossKind::Hinge => {
                let y = self.label(z)?;
                if 1.0 - y * margin(w, x) > 0.0 {
                    -y
                } else {
                    0.0
                }
            }
            LossKind::PcaKrasulina => {
                return accumulate_krasulina(w, x, weight, acc);
            }
        };
        let s = weight * coef;
        let (last, head) = acc.split_last_mut().expect("param_dim >= 2");
        for (a, xi) in head.iter_mut().zip(x) {
            *a += s * xi;
        }
        *last += s;
        Ok(())
    }

    /// Euclidean projection onto the ball of radius `expanse`.
    pub fn project(&self, w: &mut [f64]) {
        if let Some(radius) = self.expanse {
            project_ball(w, radius);
        }
    }

    /// Mean loss over `holdout`.
    pub fn estimate_risk(&self, w: &[f64], holdout: &[Sample]) -> Result<f64> {
        if holdout.is_empty() {
            return Err(Error::EmptyHoldout);
        }
        let losses = holdout
            .iter()
            .map(|z| self.loss(w, z))
            .collect::<Result<Vec<_>>>()?;
        Ok(crate::pairwise_sum(&losses) / holdout.len() as f64)
    }
}

/// `w̃ᵀx + w₀` for an augmented model vector.
pub fn margin(w: &[f64], x: &[f64]) -> f64 {
    let (w0, wt) = w.split_last().expect("augmented model is nonempty");
    dot(wt, x) + w0
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1/(1 + e⁻ˣ)` without overflow.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate_krasulina(w: &[f64], z: &[f64], weight: f64, acc: &mut [f64]) -> Result<()> {
    let nw = norm2(w);
    if nw == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let p = dot(z, w);
    let q = p * p / nw;
    for ((a, zi), wi) in acc.iter_mut().zip(z).zip(w) {
        *a += weight * (zi * p - q * wi);
    }
    Ok(())
}

/// Krasulina pseudo-gradient `ξ = z(zᵀw) − ((wᵀz)²/‖w‖²)·w`, orthogonal to `w`.
pub fn krasulina_direction(w: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    if w.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: z.len(),
        });
    }
    let mut out = vec![0.0; w.len()];
    accumulate_krasulina(w, z, 1.0, &mut out)?;
    Ok(out)
}

/// Euclidean projection onto `{‖w‖ ≤ radius}`; the result satisfies the
/// bound in floating point, not just up to rounding.
pub fn project_ball(w: &mut [f64], radius: f64) {
    let mut n = norm2(w).sqrt();
    while n > radius {
        let s = radius / n * (1.0 - f64::EPSILON);
        w.iter_mut().for_each(|v| *v *= s);
        n = norm2(w).sqrt();
    }
}

/// Covariance spectrum `λ₁ ≥ … ≥ λ_d ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSpec {
    eigenvalues: Vec<f64>,
}

impl SpectrumSpec {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::invalid("spectrum is empty"));
        }
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::invalid("eigenvalues must be finite and nonnegative"));
        }
        if eigenvalues.windows(2).any(|p| p[0] < p[1]) {
            return Err(Error::invalid("eigenvalues must be sorted nonincreasing"));
        }
        Ok(Self { eigenvalues })
    }

    /// `λ₁ = top` followed by a linear decay from `top − gap` down to `floor`.
    pub fn linear_decay(dim: usize, top: f64, gap: f64, floor: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let mut values = vec![top];
        if dim > 1 {
            let second = top - gap;
            let steps = (dim - 2).max(1) as f64;
            for k in 0..dim - 1 {
                values.push(second + (floor - second) * k as f64 / steps);
            }
        }
        Self::new(values)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn top(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn gap(&self) -> f64 {
        self.eigenvalues[0] - self.eigenvalues.get(1).copied().unwrap_or(0.0)
    }
}

/// `λ₁ − wᵀΣw/‖w‖²` for `Σ = basis·diag(λ)·basisᵀ`.
pub fn pca_excess_risk(spec: &SpectrumSpec, basis: &DMatrix<f64>, w: &[f64]) -> Result<f64> {
    let d = spec.dim();
    if w.len() != d || basis.nrows() != d || basis.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: w.len(),
        });
    }
    let nw = norm2(w);
    if nw == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut quad = 0.0;
    for (k, lambda) in spec.eigenvalues().iter().enumerate() {
        let c: f64 = basis.column(k).iter().zip(w).map(|(b, x)| b * x).sum();
        quad += lambda * c * c;
    }
    Ok((spec.top() - quad / nw).max(0.0))
}

/// Rayleigh quotient `wᵀCw/‖w‖²` against an arbitrary symmetric matrix.
pub fn rayleigh_quotient(cov: &DMatrix<f64>, w: &[f64]) -> Result<f64> {
    if cov.nrows() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: cov.nrows(),
            got: w.len(),
        });
    }
    let nw = norm2(w);
    if nw == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut quad = 0.0;
    for i in 0..w.len() {
        for j in 0..w.len() {
            quad += w[i] * cov[(i, j)] * w[j];
        }
    }
    Ok(quad / nw)
}

/// Mean of the squared distance of per-sample gradients at `w` from their
/// average; used as the configured-noise fallback `σ̂²`.
pub fn estimate_noise_variance(model: &LossModel, w: &[f64], samples: &[Sample]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::invalid("need at least two samples to estimate variance"));
    }
    let grads = samples
        .iter()
        .map(|z| model.gradient(w, z))
        .collect::<Result<Vec<_>>>()?;
    let p = model.param_dim();
    let mut mean = vec![0.0; p];
    for g in &grads {
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= grads.len() as f64);
    let total: f64 = grads
        .iter()
        .map(|g| g.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    Ok(total / (grads.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(x: &[f64], y: i8) -> Sample {
        Sample::labeled(x.to_vec(), y)
    }

    #[test]
    fn loss_at_zero() {
        let lg = LossModel::new(LossKind::Logistic, 2).unwrap();
        let hg = LossModel::new(LossKind::Hinge, 2).unwrap();
        let z = labeled(&[0.3, -1.7], -1);
        assert!((lg.loss(&[0.0; 3], &z).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(hg.loss(&[0.0; 3], &z).unwrap(), 1.0);
    }

    #[test]
    fn pca_loss_example() {
        let m = LossModel::new(LossKind::PcaKrasulina, 2).unwrap();
        let z = Sample::unlabeled(vec![1.0, 0.0]);
        assert_eq!(m.loss(&[1.0, 0.0], &z).unwrap(), -1.0);
        assert!(matches!(m.loss(&[0.0, 0.0], &z), Err(Error::ZeroNorm)));
    }

    #[test]
    fn gradient_examples() {
        let lg = LossModel::new(LossKind::Logistic, 1).unwrap();
        let g = lg.gradient(&[0.0, 0.0], &labeled(&[1.0], 1)).unwrap();
        assert_eq!(g, vec![-0.5, -0.5]);

        let hg = LossModel::new(LossKind::Hinge, 1).unwrap();
        let g = hg.gradient(&[0.0, 0.0], &labeled(&[2.0], 1)).unwrap();
        assert_eq!(g, vec![-2.0, -1.0]);
        let g = hg.gradient(&[1.0, 0.0], &labeled(&[1.0], 1)).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_rejects_bad_shapes() {
        let lg = LossModel::new(LossKind::Logistic, 2).unwrap();
        let z = labeled(&[1.0, 2.0], 1);
        assert!(matches!(
            lg.gradient(&[0.0; 2], &z),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(matches!(
            lg.gradient(&[0.0; 3], &Sample::unlabeled(vec![1.0, 2.0])),
            Err(Error::MissingLabel)
        ));
    }

    #[test]
    fn krasulina_examples() {
        assert_eq!(krasulina_direction(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(krasulina_direction(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), vec![0.5, -0.5]);
    }

    #[test]
    fn projection_examples() {
        let mut w = [3.0, 4.0];
        project_ball(&mut w, 1.0);
        assert!((w[0] - 0.6).abs() < 1e-15 && (w[1] - 0.8).abs() < 1e-15);
        let mut inside = [0.1, 0.2];
        project_ball(&mut inside, 1.0);
        assert_eq!(inside, [0.1, 0.2]);
    }

    #[test]
    fn pca_excess_risk_examples() {
        let spec = SpectrumSpec::new(vec![1.0, 0.9]).unwrap();
        let basis = DMatrix::identity(2, 2);
        assert!((pca_excess_risk(&spec, &basis, &[0.0, 1.0]).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(pca_excess_risk(&spec, &basis, &[2.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn linear_decay_spectrum() {
        let s = SpectrumSpec::linear_decay(10, 1.0, 0.1, 0.1).unwrap();
        let expected = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1];
        for (a, b) in s.eigenvalues().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((s.gap() - 0.1).abs() < 1e-12);
        assert!(SpectrumSpec::new(vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn holdout_of_one_is_that_loss() {
        let lg = LossModel::new(LossKind::Logistic, 2).unwrap();
        let z = labeled(&[0.5, 1.5], 1);
        let w = [0.2, -0.3, 0.1];
        assert_eq!(lg.estimate_risk(&w, &[z.clone()]).unwrap(), lg.loss(&w, &z).unwrap());
        assert!(matches!(lg.estimate_risk(&w, &[]), Err(Error::EmptyHoldout)));
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((logistic(0.0) - 0.5).abs() < 1e-16);
        assert_eq!(logistic(-1000.0), 0.0);
    }
}
