//! Distributed stochastic approximation from fast data streams.
//!
//! The crate is organised bottom-up:
//!
//! * [`rates`] models streaming, processing and messaging rates and evaluates
//!   the convergence bounds and scaling conditions that depend on them.
//! * [`losses`] holds the logistic, hinge and 1-PCA problem families.
//! * [`network`] builds consensus graphs and simulates exact and inexact
//!   averaging.
//! * [`streams`] generates indexed synthetic samples, reads CSV streams and
//!   maps the global stream onto per-node mini-batches.
//! * [`algorithms`] implements the centralized, local and distributed
//!   learners together with a shared simulation driver.
//! * [`harness`] parses experiment configs, runs Monte Carlo trials in
//!   parallel and writes CSV and SVG results.

pub mod algorithms;
pub mod error;
pub mod harness;
pub mod losses;
pub mod network;
pub mod quadrature;
pub mod rates;
pub mod streams;

pub use error::{Error, Result};

/// Format with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_sig17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Pairwise (cascade) summation, used wherever summation order must be
/// fixed independently of how a batch is partitioned.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig17_round_trips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, -2.5] {
            assert_eq!(fmt_sig17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }
}
