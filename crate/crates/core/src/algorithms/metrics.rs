use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::losses::{pca_excess_risk, rayleigh_quotient, LossKind, LossModel, SpectrumSpec};
use crate::quadrature;
use crate::streams::{GroundTruth, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    /// `‖w − w*‖²`.
    ParamError,
    /// `f(w) − f(w*)`, exact up to quadrature.
    ExcessRisk,
    /// Mean holdout loss.
    RiskEstimate,
    /// `λ₁ − wᵀΣw/‖w‖²`.
    PcaExcessRisk,
    /// 1 when the PCA excess risk exceeds `gap/2`, else 0.
    PcaFailure,
    /// `wᵀCw/‖w‖²` against the true or empirical covariance.
    RayleighQuotient,
    IterateNorm,
    /// Largest pairwise distance between node iterates.
    Disagreement,
}

impl MetricKind {
    const NAMES: [(&'static str, MetricKind); 8] = [
        ("param_error", MetricKind::ParamError),
        ("excess_risk", MetricKind::ExcessRisk),
        ("risk_estimate", MetricKind::RiskEstimate),
        ("pca_excess_risk", MetricKind::PcaExcessRisk),
        ("pca_failure", MetricKind::PcaFailure),
        ("rayleigh_quotient", MetricKind::RayleighQuotient),
        ("iterate_norm", MetricKind::IterateNorm),
        ("disagreement", MetricKind::Disagreement),
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES.iter().find(|(_, k)| *k == self).map(|(n, _)| *n).expect("every kind is named")
    }
}

/// A metric reduced across nodes by the mean, or by the maximum when
/// `worst` is set (name suffix `_worst`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Metric {
    pub kind: MetricKind,
    pub worst: bool,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.name(), if self.worst { "_worst" } else { "" })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, worst) = match s.strip_suffix("_worst") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let kind = MetricKind::NAMES
            .iter()
            .find(|(n, _)| *n == base)
            .map(|(_, k)| *k)
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))?;
        if worst && kind == MetricKind::Disagreement {
            return Err(Error::Config("disagreement is already a network-wide maximum".into()));
        }
        Ok(Self { kind, worst })
    }
}

/// Computes metric values for a set of node iterates.
#[derive(Debug, Clone)]
pub struct Evaluator {
    loss: LossModel,
    truth: Option<GroundTruth>,
    optimum: Option<Vec<f64>>,
    bayes_risk: f64,
    holdout: Vec<Sample>,
    covariance: Option<DMatrix<f64>>,
    metrics: Vec<Metric>,
}

impl Evaluator {
    /// `truth` is `None` for file streams; `covariance` then defaults to
    /// the empirical covariance of `holdout`.
    pub fn new(loss: LossModel, truth: Option<GroundTruth>, holdout: Vec<Sample>, metrics: Vec<Metric>) -> Result<Self> {
        let optimum = match (&truth, loss.kind) {
            (Some(t @ GroundTruth::Logistic { .. }), LossKind::Logistic | LossKind::Hinge) => t.optimum(),
            (Some(t @ GroundTruth::ConditionalGaussian { .. }), LossKind::Logistic) => t.optimum(),
            _ => None,
        };
        let bayes_risk = match (&truth, &optimum) {
            (
                Some(GroundTruth::ConditionalGaussian {
                    mean_neg,
                    mean_pos,
                    sigma_x2,
                }),
                Some(opt),
            ) => quadrature::conditional_gaussian_risk(opt, mean_neg, mean_pos, *sigma_x2),
            _ => 0.0,
        };
        let covariance = match &truth {
            Some(t) => t.covariance(),
            None if !holdout.is_empty() && loss.kind == LossKind::PcaKrasulina => Some(empirical_covariance(&holdout)),
            None => None,
        };
        let eval = Self {
            loss,
            truth,
            optimum,
            bayes_risk,
            holdout,
            covariance,
            metrics,
        };
        for m in &eval.metrics {
            eval.check(m.kind)?;
        }
        Ok(eval)
    }

    fn check(&self, kind: MetricKind) -> Result<()> {
        let pca = self.loss.kind == LossKind::PcaKrasulina;
        let ok = match kind {
            MetricKind::ParamError => self.optimum.is_some(),
            MetricKind::ExcessRisk => {
                self.loss.kind == LossKind::Logistic && self.optimum.is_some() || pca && self.spectrum().is_some()
            }
            MetricKind::RiskEstimate => !self.holdout.is_empty(),
            MetricKind::PcaExcessRisk | MetricKind::PcaFailure => pca && self.spectrum().is_some(),
            MetricKind::RayleighQuotient => pca && self.covariance.is_some(),
            MetricKind::IterateNorm | MetricKind::Disagreement => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "metric {} is not available for loss {:?} on this stream",
                kind.name(),
                self.loss.kind
            )))
        }
    }

    fn spectrum(&self) -> Option<(&SpectrumSpec, &DMatrix<f64>)> {
        match &self.truth {
            Some(GroundTruth::Covariance { spectrum, basis }) => Some((spectrum, basis)),
            _ => None,
        }
    }

    pub fn metrics(&self) -> &[Metric] {
        &self.metrics
    }

    fn per_node(&self, kind: MetricKind, w: &[f64]) -> Result<f64> {
        match kind {
            MetricKind::ParamError => {
                let opt = self.optimum.as_ref().expect("checked at construction");
                Ok(w.iter().zip(opt).map(|(a, b)| (a - b).powi(2)).sum())
            }
            MetricKind::ExcessRisk if self.loss.kind == LossKind::PcaKrasulina => {
                self.per_node(MetricKind::PcaExcessRisk, w)
            }
            MetricKind::ExcessRisk => match self.truth.as_ref().expect("checked at construction") {
                GroundTruth::Logistic { w_star } => Ok(quadrature::logistic_gaussian_excess_risk(w, w_star)),
                GroundTruth::ConditionalGaussian {
                    mean_neg,
                    mean_pos,
                    sigma_x2,
                } => Ok((quadrature::conditional_gaussian_risk(w, mean_neg, mean_pos, *sigma_x2) - self.bayes_risk)
                    .max(0.0)),
                GroundTruth::Covariance { .. } => unreachable!("PCA handled above"),
            },
            MetricKind::RiskEstimate => self.loss.estimate_risk(w, &self.holdout),
            MetricKind::PcaExcessRisk => {
                let (spec, basis) = self.spectrum().expect("checked at construction");
                pca_excess_risk(spec, basis, w)
            }
            MetricKind::PcaFailure => {
                let (spec, _) = self.spectrum().expect("checked at construction");
                let risk = self.per_node(MetricKind::PcaExcessRisk, w)?;
                Ok(if risk > spec.gap() / 2.0 { 1.0 } else { 0.0 })
            }
            MetricKind::RayleighQuotient => {
                rayleigh_quotient(self.covariance.as_ref().expect("checked at construction"), w)
            }
            MetricKind::IterateNorm => Ok(crate::norm2(w).sqrt()),
            MetricKind::Disagreement => unreachable!("network-wide metric"),
        }
    }

    /// One value per configured metric for the given node iterates.
    pub fn evaluate(&self, nodes: &[&[f64]]) -> Result<Vec<f64>> {
        if nodes.is_empty() {
            return Err(Error::invalid("no iterates to evaluate"));
        }
        let mut cache: Vec<(MetricKind, Vec<f64>)> = Vec::new();
        self.metrics
            .iter()
            .map(|m| {
                if m.kind == MetricKind::Disagreement {
                    return Ok(disagreement(nodes));
                }
                let values = match cache.iter().find(|(k, _)| *k == m.kind) {
                    Some((_, v)) => v.clone(),
                    None => {
                        let v = nodes.iter().map(|w| self.per_node(m.kind, w)).collect::<Result<Vec<_>>>()?;
                        cache.push((m.kind, v.clone()));
                        v
                    }
                };
                Ok(if m.worst {
                    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    crate::pairwise_sum(&values) / values.len() as f64
                })
            })
            .collect()
    }
}

fn disagreement(nodes: &[&[f64]]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            let d: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
            worst = worst.max(d.sqrt());
        }
    }
    worst
}

/// `(1/n) Σ z zᵀ` (the streams are zero-mean).
pub fn empirical_covariance(samples: &[Sample]) -> DMatrix<f64> {
    let d = samples.first().map_or(0, |s| s.features.len());
    let mut c = DMatrix::zeros(d, d);
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] += s.features[i] * s.features[j];
            }
        }
    }
    c / samples.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::SyntheticStream;

    #[test]
    fn metric_names_round_trip() {
        for name in ["param_error", "excess_risk_worst", "pca_failure", "disagreement"] {
            assert_eq!(name.parse::<Metric>().unwrap().to_string(), name);
        }
        assert!("bogus".parse::<Metric>().is_err());
        assert!("disagreement_worst".parse::<Metric>().is_err());
    }

    #[test]
    fn unavailable_metric_is_rejected() {
        let loss = LossModel::new(LossKind::Logistic, 3).unwrap();
        let err = Evaluator::new(loss, None, Vec::new(), vec!["param_error".parse().unwrap()]);
        assert!(err.is_err());
    }

    #[test]
    fn mean_and_worst_reductions() {
        let stream = SyntheticStream::logistic_with_truth(vec![0.0, 0.0], 1).unwrap();
        let loss = LossModel::new(LossKind::Logistic, 1).unwrap();
        let metrics = vec!["param_error".parse().unwrap(), "param_error_worst".parse().unwrap()];
        let eval = Evaluator::new(loss, Some(stream.truth().clone()), Vec::new(), metrics).unwrap();
        let a = [1.0, 0.0];
        let b = [0.0, 3.0];
        assert_eq!(eval.evaluate(&[&a, &b]).unwrap(), vec![5.0, 9.0]);
    }
}
