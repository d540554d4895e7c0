/// Across-trial summary of one metric at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
}

impl Summary {
    /// `values` in trial order; the mean is summed in that order.
    pub fn of(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "summary of zero trials");
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self {
            mean: crate::pairwise_sum(values) / n as f64,
            median,
            q10: nearest_rank(&sorted, 0.1),
            q90: nearest_rank(&sorted, 0.9),
        }
    }
}

/// Nearest-rank quantile of ascending `sorted`: the value at rank `⌈q·n⌉`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_summaries() {
        let s = Summary::of(&[3.0, 1.0, 2.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q10, 1.0);
        assert_eq!(s.q90, 4.0);

        let v: Vec<f64> = (1..=10).map(f64::from).rev().collect();
        let s = Summary::of(&v);
        assert_eq!(s.q10, 1.0);
        assert_eq!(s.q90, 9.0);
        assert_eq!(s.median, 5.5);

        let s = Summary::of(&[7.0]);
        assert_eq!((s.mean, s.median, s.q10, s.q90), (7.0, 7.0, 7.0, 7.0));
    }
}
