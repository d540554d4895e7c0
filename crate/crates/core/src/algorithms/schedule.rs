use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rates::krasulina_offsets;

/// Stepsize sequence `η_t` (and momentum weight `β_t` for accelerated
/// learners), indexed from `t = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { eta: f64 },
    /// `c/√t`.
    InvSqrt { c: f64 },
    /// `c/t`.
    InvT { c: f64 },
    /// `min(1/(2L), √(D²/(2T)))` for a known horizon `T`.
    LanOptimal { lipschitz: f64, expanse: f64, horizon: u64 },
    /// `1/(L + (σ/D)·√t)`.
    DmbBound { lipschitz: f64, sigma: f64, expanse: f64 },
    /// `c/(Q + t)` with `c = c₀/(2·gap)`.
    Krasulina { c0: f64, gap: f64, q: f64 },
    /// `η_t = c/(t+1)^{3/2}`, `β_t = max(1, t/2)`.
    AdsgdPair { c: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("schedule {name} must be positive, got {v}")))
            }
        };
        match *self {
            StepSchedule::Constant { eta } => positive("eta", eta),
            StepSchedule::InvSqrt { c } | StepSchedule::InvT { c } | StepSchedule::AdsgdPair { c } => positive("c", c),
            StepSchedule::LanOptimal {
                lipschitz,
                expanse,
                horizon,
            } => {
                positive("lipschitz", lipschitz)?;
                positive("expanse", expanse)?;
                if horizon == 0 {
                    return Err(Error::invalid("schedule horizon must be positive"));
                }
                Ok(())
            }
            StepSchedule::DmbBound {
                lipschitz,
                sigma,
                expanse,
            } => {
                positive("expanse", expanse)?;
                if lipschitz < 0.0 || sigma < 0.0 || lipschitz + sigma == 0.0 {
                    return Err(Error::invalid("dmb_bound needs L, σ ≥ 0 not both zero"));
                }
                Ok(())
            }
            StepSchedule::Krasulina { c0, gap, q } => {
                if !(c0 > 2.0) {
                    return Err(Error::invalid(format!("krasulina schedule needs c0 > 2, got {c0}")));
                }
                positive("gap", gap)?;
                if !(q >= 0.0) {
                    return Err(Error::invalid(format!("krasulina offset must be nonnegative, got {q}")));
                }
                Ok(())
            }
        }
    }

    /// Bound-derived schedule for DM-Krasulina with `Q = Q₁ + Q₂`.
    pub fn krasulina_bound(c0: f64, gap: f64, dim: usize, kappa: f64, sigma_b2: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        let c = c0 / (2.0 * gap);
        let (q1, q2) = krasulina_offsets(dim, kappa, sigma_b2, c, delta);
        let schedule = StepSchedule::Krasulina { c0, gap, q: q1 + q2 };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn eta(&self, t: u64) -> f64 {
        let tf = t as f64;
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::InvSqrt { c } => c / tf.sqrt(),
            StepSchedule::InvT { c } => c / tf,
            StepSchedule::LanOptimal {
                lipschitz,
                expanse,
                horizon,
            } => (0.5 / lipschitz).min((expanse * expanse / (2.0 * horizon as f64)).sqrt()),
            StepSchedule::DmbBound {
                lipschitz,
                sigma,
                expanse,
            } => 1.0 / (lipschitz + sigma / expanse * tf.sqrt()),
            StepSchedule::Krasulina { c0, gap, q } => c0 / (2.0 * gap) / (q + tf),
            StepSchedule::AdsgdPair { c } => c / (tf + 1.0).powf(1.5),
        }
    }

    pub fn beta(&self, t: u64) -> f64 {
        match self {
            StepSchedule::AdsgdPair { .. } => (t as f64 / 2.0).max(1.0),
            _ => 1.0,
        }
    }

    /// Replace the leading constant, where the schedule has one.
    pub fn with_scale(self, c: f64) -> Result<Self> {
        Ok(match self {
            StepSchedule::Constant { .. } => StepSchedule::Constant { eta: c },
            StepSchedule::InvSqrt { .. } => StepSchedule::InvSqrt { c },
            StepSchedule::InvT { .. } => StepSchedule::InvT { c },
            StepSchedule::AdsgdPair { .. } => StepSchedule::AdsgdPair { c },
            StepSchedule::Krasulina { gap, q, .. } => StepSchedule::Krasulina { c0: c, gap, q },
            other => {
                return Err(Error::invalid(format!("schedule {other:?} has no scale constant")));
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        assert_eq!(StepSchedule::InvSqrt { c: 2.5 }.eta(4), 1.25);
        assert_eq!(StepSchedule::InvT { c: 10.0 }.eta(5), 2.0);
        assert_eq!(StepSchedule::AdsgdPair { c: 8.0 }.eta(3), 1.0);
        assert_eq!(StepSchedule::AdsgdPair { c: 8.0 }.beta(1), 1.0);
        assert_eq!(StepSchedule::AdsgdPair { c: 8.0 }.beta(6), 3.0);
        assert_eq!(StepSchedule::InvSqrt { c: 1.0 }.beta(6), 1.0);
        let lan = StepSchedule::LanOptimal {
            lipschitz: 1.0,
            expanse: 2.0,
            horizon: 200,
        };
        assert!((lan.eta(7) - 0.1).abs() < 1e-15);
        let dmb = StepSchedule::DmbBound {
            lipschitz: 1.0,
            sigma: 2.0,
            expanse: 1.0,
        };
        assert!((dmb.eta(9) - 1.0 / 7.0).abs() < 1e-15);
        let k = StepSchedule::Krasulina {
            c0: 3.0,
            gap: 0.1,
            q: 5.0,
        };
        assert!((k.eta(10) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn krasulina_requires_c0_above_two() {
        let bad = StepSchedule::Krasulina { c0: 2.0, gap: 0.1, q: 0.0 };
        assert!(bad.validate().is_err());
        let s = StepSchedule::krasulina_bound(3.0, 0.1, 10, 1.0, 1.0, 0.1).unwrap();
        let StepSchedule::Krasulina { q, .. } = s else { unreachable!() };
        let (q1, q2) = krasulina_offsets(10, 1.0, 1.0, 15.0, 0.1);
        assert_eq!(q, q1 + q2);
    }

    #[test]
    fn parses_from_toml() {
        let s: StepSchedule = toml::from_str("kind = \"inv_sqrt\"\nc = 2.5").unwrap();
        assert_eq!(s, StepSchedule::InvSqrt { c: 2.5 });
    }
}
