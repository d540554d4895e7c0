//! Streaming/processing/communications rate model.
//!
//! A system of `N` homogeneous nodes receives `R_s` samples per second at a
//! splitter, each node processes `R_p` samples per second and the network
//! exchanges `R_c` messages per second. One algorithmic iteration consumes a
//! network-wide mini-batch of `B` samples and then spends `R` message rounds
//! aggregating. Everything here is a pure function of those numbers.

use crate::error::{Error, Result};

/// Relative tolerance used before taking floor/ceil of a rate ratio.
const SNAP_TOLERANCE: f64 = 1e-9;

/// Snap `x` onto the nearest integer when it is within rounding noise of it.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= SNAP_TOLERANCE * r.abs().max(1.0) {
        r
    } else {
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemRates {
    /// `R_s`, samples/second arriving at the splitter.
    pub streaming_rate: f64,
    /// `R_p`, samples/second/node.
    pub processing_rate: f64,
    /// `R_c`, messages/second.
    pub messaging_rate: f64,
    pub nodes: usize,
    pub minibatch: usize,
    pub rounds: usize,
}

impl SystemRates {
    pub fn new(
        streaming_rate: f64,
        processing_rate: f64,
        messaging_rate: f64,
        nodes: usize,
        minibatch: usize,
        rounds: usize,
    ) -> Result<Self> {
        let rates = Self {
            streaming_rate,
            processing_rate,
            messaging_rate,
            nodes,
            minibatch,
            rounds,
        };
        rates.validate()?;
        Ok(rates)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("streaming rate", self.streaming_rate),
            ("processing rate", self.processing_rate),
            ("messaging rate", self.messaging_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.nodes == 0 {
            return Err(Error::invalid("node count must be positive"));
        }
        if self.minibatch == 0 || self.minibatch % self.nodes != 0 {
            return Err(Error::invalid(format!(
                "mini-batch {} is not a positive multiple of N = {}",
                self.minibatch, self.nodes
            )));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be at least 1"));
        }
        Ok(())
    }

    pub fn with_minibatch(mut self, minibatch: usize) -> Self {
        self.minibatch = minibatch;
        self
    }

    pub fn with_rounds(mut self, rounds: usize) -> Self {
        self.rounds = rounds;
        self
    }

    /// Seconds spent per iteration: `B/(N·R_p) + R/R_c`.
    pub fn iteration_seconds(&self) -> f64 {
        iteration_seconds(self, self.rounds)
    }

    /// Mismatch ratio `ρ = N·R_c/R_s − 1/R_p`.
    pub fn mismatch(&self) -> f64 {
        self.nodes as f64 * self.messaging_rate / self.streaming_rate - 1.0 / self.processing_rate
    }
}

fn iteration_seconds(rates: &SystemRates, rounds: usize) -> f64 {
    rates.minibatch as f64 / (rates.nodes as f64 * rates.processing_rate)
        + rounds as f64 / rates.messaging_rate
}

/// Mini-batches per second, `(B/(N·R_p) + R/R_c)^-1`.
pub fn effective_rate(rates: &SystemRates) -> f64 {
    iteration_seconds(rates, rates.rounds).recip()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundsBudget {
    pub rounds: usize,
    /// False when no time is left for even a single message round.
    pub feasible: bool,
}

/// Largest `R` with `B/(N·R_p) + R/R_c ≤ B/R_s`. The `rounds` field of
/// `rates` is ignored.
pub fn max_rounds(rates: &SystemRates) -> RoundsBudget {
    let n_rp = rates.nodes as f64 * rates.processing_rate;
    let slack = n_rp - rates.streaming_rate;
    if slack <= 0.0 {
        return RoundsBudget {
            rounds: 0,
            feasible: false,
        };
    }
    let raw = rates.minibatch as f64 * rates.messaging_rate * slack / (rates.streaming_rate * n_rp);
    let rounds = snap(raw).floor() as usize;
    RoundsBudget {
        rounds,
        feasible: rounds >= 1,
    }
}

/// Samples dropped at the splitter per iteration, `max(0, ⌈R_s/R_e⌉ − B)`.
pub fn discarded_per_iteration(rates: &SystemRates) -> usize {
    let arriving = snap(rates.streaming_rate / effective_rate(rates)).ceil();
    (arriving - rates.minibatch as f64).max(0.0) as usize
}

/// Lower bound on `R_c` that lets `R` rounds fit between splits:
/// `N·R·R_s·R_p / (B·(N·R_p − R_s))`.
pub fn min_comm_rate(rates: &SystemRates) -> Result<f64> {
    let n = rates.nodes as f64;
    let slack = n * rates.processing_rate - rates.streaming_rate;
    if slack <= 0.0 {
        return Err(Error::Infeasible(format!(
            "N·R_p = {} does not exceed R_s = {}",
            n * rates.processing_rate,
            rates.streaming_rate
        )));
    }
    Ok(n * rates.rounds as f64 * rates.streaming_rate * rates.processing_rate
        / (rates.minibatch as f64 * slack))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerReport {
    pub minibatch: usize,
    /// Rounds the report was evaluated at.
    pub rounds: usize,
    pub max_rounds: usize,
    pub effective_rate: f64,
    pub discarded: usize,
    /// `R_s/R_e`, samples arriving per iteration.
    pub rate_ratio: f64,
    pub mismatch: f64,
    pub feasible: bool,
}

impl PlannerReport {
    pub const CSV_HEADER: [&'static str; 7] = ["B", "R", "R_e", "Rs_over_Re", "mu", "rho", "feasible"];

    pub fn csv_record(&self) -> [String; 7] {
        [
            self.minibatch.to_string(),
            self.rounds.to_string(),
            crate::fmt_sig17(self.effective_rate),
            crate::fmt_sig17(self.rate_ratio),
            self.discarded.to_string(),
            crate::fmt_sig17(self.mismatch),
            self.feasible.to_string(),
        ]
    }
}

/// Evaluate the planner at `rates` as given (including its `rounds`).
pub fn plan(rates: &SystemRates) -> PlannerReport {
    report_at(rates, rates.rounds)
}

fn report_at(rates: &SystemRates, rounds: usize) -> PlannerReport {
    let budget = max_rounds(rates);
    let effective = iteration_seconds(rates, rounds).recip();
    let ratio = rates.streaming_rate / effective;
    let arriving = snap(ratio).ceil();
    let discarded = (arriving - rates.minibatch as f64).max(0.0) as usize;
    PlannerReport {
        minibatch: rates.minibatch,
        rounds,
        max_rounds: budget.rounds,
        effective_rate: effective,
        discarded,
        rate_ratio: ratio,
        mismatch: rates.mismatch(),
        feasible: rounds >= 1 && snap(ratio) <= rates.minibatch as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundsPolicy {
    /// Exact-averaging regime: use as many rounds as fit.
    MaxRounds,
    Fixed(usize),
}

/// One report per mini-batch size. Rows whose round budget is zero are
/// reported as infeasible.
pub fn rate_ratio_sweep(
    template: &SystemRates,
    minibatches: &[usize],
    policy: RoundsPolicy,
) -> Result<Vec<PlannerReport>> {
    minibatches
        .iter()
        .map(|&b| {
            if b == 0 || b % template.nodes != 0 {
                return Err(Error::invalid(format!(
                    "mini-batch {b} is not a positive multiple of N = {}",
                    template.nodes
                )));
            }
            let rates = template.with_minibatch(b);
            let rounds = match policy {
                RoundsPolicy::MaxRounds => max_rounds(&rates).rounds,
                RoundsPolicy::Fixed(r) => r,
            };
            let mut row = report_at(&rates, rounds);
            if row.max_rounds == 0 {
                row.feasible = false;
            }
            Ok(row)
        })
        .collect()
}

/// Default planner mini-batch grid for `nodes` nodes: multiples of
/// `N` spaced roughly logarithmically up to `10^5`.
pub fn default_minibatch_grid(nodes: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut b = nodes as f64;
    while b <= 1e5 {
        let rounded = ((b / nodes as f64).round() as usize).max(1) * nodes;
        if out.last() != Some(&rounded) {
            out.push(rounded);
        }
        b *= 10f64.powf(0.125);
    }
    out
}

/// Inputs to the inexact-averaging noise moment formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundEvaluator {
    /// `|λ₂(A)|`, in `[0, 1)`.
    pub lambda2: f64,
    /// Gradient noise variance `σ²`.
    pub sigma2: f64,
    pub lipschitz: f64,
    pub expanse: f64,
    pub minibatch: usize,
    pub nodes: usize,
    pub rounds: usize,
    pub t: u64,
    /// Stepsize `η_t`; only the accelerated moments use it.
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseMoments {
    /// Variance bound `Δ_t²`.
    pub variance: f64,
    /// Bias bound `Ξ_t`.
    pub bias: f64,
}

impl BoundEvaluator {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda2) {
            return Err(Error::invalid(format!("lambda2 = {} outside [0, 1)", self.lambda2)));
        }
        if self.sigma2 < 0.0 || self.lipschitz < 0.0 || self.expanse < 0.0 || self.eta < 0.0 {
            return Err(Error::invalid("bound inputs must be nonnegative"));
        }
        if self.nodes == 0 || self.minibatch == 0 || self.minibatch % self.nodes != 0 {
            return Err(Error::invalid("mini-batch must be a positive multiple of N"));
        }
        Ok(())
    }

    /// Effective gradient-noise moments after `R` consensus rounds.
    ///
    /// Standard variant (D-SGD):
    ///
    /// ```text
    /// Ξ  = s·(1+N²λ^R)·((1+N²λ^R)^t − 1)
    /// Δ² = 4σ²/B + 2s²·(1+N⁴λ^{2R})·((1+N²λ^R)^t − 1)² + 4λ^{2R}σ²N³/B
    /// ```
    ///
    /// Accelerated variant (AD-SGD), with `g = (1+2ηN²Lλ^R)^t − 1`:
    ///
    /// ```text
    /// Ξ  = s·(1+B²λ^R)·g
    /// Δ² = 2s²·g² + 4σ²/(B/N)·(λ^{2R}N² + 1/N)
    /// ```
    ///
    /// where `s = σ/√(B/N)` and `λ = |λ₂(A)|`.
    pub fn noise_moments(&self, accelerated: bool) -> NoiseMoments {
        let n = self.nodes as f64;
        let b = self.minibatch as f64;
        let local = b / n;
        let sigma2 = self.sigma2;
        let s2 = sigma2 / local;
        let s = s2.sqrt();
        let lam_r = self.lambda2.powi(self.rounds as i32);
        let lam_2r = lam_r * lam_r;
        let t = self.t as i32;

        if accelerated {
            let growth =
                (1.0 + 2.0 * self.eta * n * n * self.lipschitz * lam_r).powi(t) - 1.0;
            NoiseMoments {
                variance: 2.0 * s2 * growth * growth + 4.0 * sigma2 / local * (lam_2r * n * n + 1.0 / n),
                bias: s * (1.0 + b * b * lam_r) * growth,
            }
        } else {
            let base = 1.0 + n * n * lam_r;
            let growth = base.powi(t) - 1.0;
            NoiseMoments {
                variance: 4.0 * sigma2 / b
                    + 2.0 * s2 * (1.0 + n.powi(4) * lam_2r) * growth * growth
                    + 4.0 * lam_2r * sigma2 * n.powi(3) / b,
                bias: s * base * growth,
            }
        }
    }

    /// Excess-risk bound `2L/t + √(4Δ²/t) + √(1/2)·Ξ·D_W/L` for D-SGD.
    pub fn dsgd_risk_bound(&self) -> f64 {
        let m = self.noise_moments(false);
        let t = self.t as f64;
        2.0 * self.lipschitz / t
            + (4.0 * m.variance / t).sqrt()
            + 0.5f64.sqrt() * m.bias * self.expanse / self.lipschitz
    }

    /// Excess-risk bound `8L/t² + 4√(4Δ²/t) + √32·Ξ` for AD-SGD.
    pub fn adsgd_risk_bound(&self) -> f64 {
        let m = self.noise_moments(true);
        let t = self.t as f64;
        8.0 * self.lipschitz / (t * t) + 4.0 * (4.0 * m.variance / t).sqrt() + 32f64.sqrt() * m.bias
    }
}

pub fn dsgd_noise_moments(be: &BoundEvaluator, accelerated: bool) -> Result<NoiseMoments> {
    be.validate()?;
    Ok(be.noise_moments(accelerated))
}

/// Direction of an order-optimality inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    AtLeast,
    AtMost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: &'static str,
    pub value: f64,
    pub relation: Relation,
    pub bound: f64,
    pub pass: bool,
}

impl Condition {
    fn new(name: &'static str, value: f64, relation: Relation, bound: f64) -> Self {
        let pass = match relation {
            Relation::AtLeast => value >= bound,
            Relation::AtMost => value <= bound,
        };
        Self {
            name,
            value,
            relation,
            bound,
            pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub mismatch: f64,
    pub accelerated: bool,
    pub conditions: Vec<Condition>,
}

impl ScalingReport {
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }

    pub fn condition(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// `log(t')/log(1/λ₂)`, taken as 0 when `λ₂ = 0` (one round averages
/// exactly, so no extra rounds are ever needed).
fn consensus_log_ratio(lambda2: f64, t_prime: f64) -> f64 {
    if lambda2 == 0.0 {
        0.0
    } else {
        t_prime.ln() / (1.0 / lambda2).ln()
    }
}

/// Order-optimality conditions for D-SGD (or AD-SGD when `accelerated`),
/// each checked with every hidden constant set to 1. These are soft
/// diagnostics; nothing here errors on a failed condition.
pub fn check_scaling_conditions(
    rates: &SystemRates,
    lambda2: f64,
    sigma: f64,
    t_prime: f64,
    accelerated: bool,
) -> Result<ScalingReport> {
    if t_prime < 1.0 {
        return Err(Error::invalid("t' must be at least 1"));
    }
    if sigma <= 0.0 {
        return Err(Error::invalid("sigma must be positive"));
    }
    if !(0.0..1.0).contains(&lambda2) {
        return Err(Error::invalid(format!("lambda2 = {lambda2} outside [0, 1)")));
    }
    let n = rates.nodes as f64;
    let local = rates.minibatch as f64 / n;
    let rho = rates.mismatch();
    let log_ratio = consensus_log_ratio(lambda2, t_prime);

    let lower = if log_ratio == 0.0 {
        1.0
    } else if rho > 0.0 {
        1.0 + log_ratio / rho
    } else {
        f64::INFINITY
    };
    let (upper, growth, horizon) = if accelerated {
        (sigma.sqrt() * t_prime.powf(0.75) / n, t_prime.powf(0.75), n.powf(4.0 / 3.0) / (sigma * sigma))
    } else {
        (sigma * t_prime.sqrt() / n, t_prime.sqrt(), n * n / (sigma * sigma))
    };
    let comm = rates.streaming_rate * log_ratio / (sigma * growth)
        + rates.streaming_rate / (rates.processing_rate * n);

    Ok(ScalingReport {
        mismatch: rho,
        accelerated,
        conditions: vec![
            Condition::new("local_batch_lower", local, Relation::AtLeast, lower),
            Condition::new("local_batch_upper", local, Relation::AtMost, upper),
            Condition::new("messaging_rate", rates.messaging_rate, Relation::AtLeast, comm),
            Condition::new("horizon", t_prime, Relation::AtLeast, horizon),
        ],
    })
}

/// DMB error bound `(B+μ)·(2D²L/t' + 2Dσ/√t')`.
pub fn dmb_error_bound(
    minibatch: usize,
    discarded: usize,
    t_prime: f64,
    lipschitz: f64,
    sigma: f64,
    expanse: f64,
) -> f64 {
    (minibatch + discarded) as f64
        * (2.0 * expanse * expanse * lipschitz / t_prime + 2.0 * expanse * sigma / t_prime.sqrt())
}

/// Leading term `2Dσ/√t'` that DMB attains when `B = t'^ρ` with `ρ < 1/2`
/// and `μ = o(B)`.
pub fn dmb_asymptotic_bound(t_prime: f64, sigma: f64, expanse: f64) -> f64 {
    2.0 * expanse * sigma / t_prime.sqrt()
}

/// Mini-batch ceiling `t'^(1 − 2/c₀)` under which DM-Krasulina keeps the
/// `O(1/t')` rate.
pub fn krasulina_batch_limit(t_prime: f64, c0: f64) -> f64 {
    t_prime.powf(1.0 - 2.0 / c0)
}

/// Offsets `(Q₁, Q₂)` for the DM-Krasulina stepsize `c/(Q+t)`.
pub fn krasulina_offsets(
    dim: usize,
    kappa: f64,
    sigma_b2: f64,
    c: f64,
    delta: f64,
) -> (f64, f64) {
    let e = std::f64::consts::E;
    let d = dim as f64;
    let scale = c.powi(2).max(1.0) * (4.0 / delta).ln();
    let q1 = 64.0 * e * d * kappa.powi(4) * scale / delta.powi(2);
    let q2 = 512.0 * e * e * d * d * sigma_b2 * scale / delta.powi(4);
    (q1, q2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates(b: usize, n: usize, rp: f64, r: usize, rc: f64, rs: f64) -> SystemRates {
        SystemRates::new(rs, rp, rc, n, b, r).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn effective_rate_examples() {
        let r = rates(100, 10, 1.25e5, 5, 1e4, 1.0);
        assert!(rel(effective_rate(&r), 1.0 / (100.0 / 1.25e6 + 5.0 / 1e4)) < 1e-12);
        assert!((effective_rate(&r) - 1724.1379).abs() < 1e-4);

        let r = rates(10, 10, 1.25e5, 1, 1e12, 1.0);
        assert!(rel(effective_rate(&r), 1.25e5) < 1e-6);

        let r = rates(500, 10, 1.25e5, 10, 1e3, 1.0);
        assert!((effective_rate(&r) - 96.1538).abs() < 1e-4);
    }

    #[test]
    fn max_rounds_examples() {
        let r = rates(10_000, 10, 1.25e5, 1, 1e3, 1e6);
        assert_eq!(max_rounds(&r), RoundsBudget { rounds: 2, feasible: true });

        let r = rates(500, 10, 1.25e5, 1, 1e4, 1e5);
        assert_eq!(max_rounds(&r).rounds, 46);

        let r = rates(500, 10, 1.25e5, 1, 1e4, 1.25e6);
        assert_eq!(max_rounds(&r), RoundsBudget { rounds: 0, feasible: false });
    }

    #[test]
    fn discarded_examples() {
        let r = rates(100, 10, 1.25e5, 5, 1e4, 1e6);
        assert_eq!(discarded_per_iteration(&r), 480);
        let r = rates(500, 10, 1.25e5, 10, 1e3, 1e5);
        assert_eq!(discarded_per_iteration(&r), 540);
        let r = rates(500, 10, 1.25e5, 10, 1e3, 10.0);
        assert_eq!(discarded_per_iteration(&r), 0);
    }

    #[test]
    fn min_comm_rate_examples() {
        let r = rates(500, 10, 1.25e5, 9, 1.0, 1e5);
        let expected = 10.0 * 9.0 * 1e5 * 1.25e5 / (500.0 * (1.25e6 - 1e5));
        assert!(rel(min_comm_rate(&r).unwrap(), expected) < 1e-12);
        assert!((min_comm_rate(&r).unwrap() - 1956.52).abs() < 0.01);

        let doubled = r.with_minibatch(1000);
        assert!(rel(min_comm_rate(&doubled).unwrap(), expected / 2.0) < 1e-12);

        let near = rates(500, 10, 1.25e5, 9, 1.0, 1.25e6 * (1.0 - 1e-9));
        assert!(min_comm_rate(&near).unwrap() > 1e11);
        let over = rates(500, 10, 1.25e5, 9, 1.0, 1.25e6);
        assert!(matches!(min_comm_rate(&over), Err(Error::Infeasible(_))));
    }

    #[test]
    fn invalid_rates_rejected() {
        assert!(SystemRates::new(1.0, 1.0, 1.0, 3, 10, 1).is_err());
        assert!(SystemRates::new(0.0, 1.0, 1.0, 1, 1, 1).is_err());
        assert!(SystemRates::new(1.0, 1.0, 1.0, 1, 1, 0).is_err());
    }

    #[test]
    fn mismatch_example() {
        let r = rates(10, 10, 1.25e5, 1, 1e4, 1e6);
        assert!((r.mismatch() - 0.099992).abs() < 1e-12);
    }

    #[test]
    fn sweep_ratio_example_and_compute_limit() {
        let template = rates(10, 10, 1.25e5, 10, 1e3, 1e6);
        let rows = rate_ratio_sweep(&template, &[1000], RoundsPolicy::Fixed(10)).unwrap();
        assert!(rel(rows[0].rate_ratio, 10_800.0) < 1e-12);

        let fast = rates(10, 10, 1.25e5, 1, 1e15, 1e6);
        let rows = rate_ratio_sweep(&fast, &[100, 1000], RoundsPolicy::Fixed(1)).unwrap();
        for row in rows {
            let per_sample = row.rate_ratio / row.minibatch as f64;
            assert!(rel(per_sample, 1e6 / 1.25e6) < 1e-6);
        }
    }

    #[test]
    fn sweep_rejects_non_multiple() {
        let template = rates(10, 10, 1.25e5, 1, 1e4, 1e6);
        let err = rate_ratio_sweep(&template, &[10, 15], RoundsPolicy::MaxRounds).unwrap_err();
        assert!(err.to_string().contains("15"));
    }

    #[test]
    fn lambda_zero_collapses_lower_bound() {
        let r = rates(10, 10, 1.25e5, 1, 1e4, 1e6);
        let report = check_scaling_conditions(&r, 0.0, 1.0, 1e4, false).unwrap();
        assert_eq!(report.condition("local_batch_lower").unwrap().bound, 1.0);
    }

    #[test]
    fn negative_mismatch_fails_lower_bound() {
        let r = rates(10, 10, 1.25e5, 1, 0.5, 1e6);
        let report = check_scaling_conditions(&r, 0.5, 1.0, 1e4, false).unwrap();
        assert!(report.mismatch < 0.0);
        assert!(!report.condition("local_batch_lower").unwrap().pass);
    }
}
