//! Statistical post-processing of urn output.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::urn::{final_shares, ChainState, RewardSchedule};

/// Default stability tolerance: the "halved or doubled" scale.
pub const DEFAULT_EPSILON: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SampleSummary {
    pub count: usize,
    pub mean: f64,
    /// Unbiased; zero for a single sample.
    pub variance: f64,
    /// `(threshold, fraction of samples strictly above it)`.
    pub tail_probs: Vec<(f64, f64)>,
}

impl SampleSummary {
    pub fn tail(&self, threshold: f64) -> Option<f64> {
        self.tail_probs
            .iter()
            .find(|(th, _)| *th == threshold)
            .map(|(_, p)| *p)
    }

    pub fn std_error(&self) -> f64 {
        libm::sqrt(self.variance / self.count as f64)
    }
}

pub fn summarize(samples: &[f64], thresholds: &[f64]) -> Result<SampleSummary> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = samples.len();
    let mean = mean(samples);
    let variance = if n > 1 {
        samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let tail_probs = thresholds
        .iter()
        .map(|&th| {
            let above = samples.iter().filter(|&&x| x > th).count();
            (th, above as f64 / n as f64)
        })
        .collect();
    Ok(SampleSummary {
        count: n,
        mean,
        variance,
        tail_probs,
    })
}

// Pairwise summation keeps the mean independent of sample order to within
// rounding of a balanced tree rather than a running sum.
fn mean(xs: &[f64]) -> f64 {
    fn pairwise(xs: &[f64]) -> f64 {
        if xs.len() <= 32 {
            return xs.iter().sum();
        }
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise(a) + pairwise(b)
    }
    pairwise(xs) / xs.len() as f64
}

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n - F|`.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d = d.max(above).max(below);
    }
    Ok(d.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Histogram {
    /// `bins + 1` uniformly spaced edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Samples below the first edge.
    pub underflow: u64,
    /// Samples at or above the last edge.
    pub overflow: u64,
}

impl Histogram {
    pub fn in_range(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn frequencies(&self, total: usize) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect()
    }
}

/// Uniform-width histogram on `[lo, hi)`.
pub fn histogram(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if bins == 0 {
        return Err(invalid("bins", "need at least one bin"));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidRange { lo, hi });
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = alloc::vec![0u64; bins];
    let (mut underflow, mut overflow) = (0, 0);
    for &x in samples {
        if x < lo {
            underflow += 1;
        } else if x >= hi || x.is_nan() {
            overflow += 1;
        } else {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    Ok(Histogram {
        edges,
        counts,
        underflow,
        overflow,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhaseSweepRow {
    pub volume: f64,
    pub n0: f64,
    pub epsilon: f64,
    /// Empirical `P(|pi_t / pi_0 - 1| > epsilon)`.
    pub dev_prob: f64,
    pub ratio_var: f64,
    pub runs: usize,
}

/// Stability sweep over initial volumes and probe holdings.
///
/// Each cell runs a two-colour urn `[n0, N - n0]` (the other miners merged,
/// which leaves the probe's law unchanged) for `horizon` steps.
pub fn phase_sweep(
    schedule: &RewardSchedule,
    n0_grid: &[f64],
    volume_grid: &[f64],
    epsilon: f64,
    horizon: u64,
    runs: usize,
    seed: u64,
) -> Result<Vec<PhaseSweepRow>> {
    if n0_grid.is_empty() || volume_grid.is_empty() {
        return Err(Error::EmptyInput);
    }
    if runs < 100 {
        return Err(invalid("runs", format!("need at least 100 runs, got {runs}")));
    }
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    let mut rows = Vec::with_capacity(n0_grid.len() * volume_grid.len());
    for &volume in volume_grid {
        for &n0 in n0_grid {
            rows.push(sweep_cell(schedule, n0, volume, epsilon, horizon, runs, seed)?);
        }
    }
    Ok(rows)
}

pub fn sweep_cell(
    schedule: &RewardSchedule,
    n0: f64,
    volume: f64,
    epsilon: f64,
    horizon: u64,
    runs: usize,
    seed: u64,
) -> Result<PhaseSweepRow> {
    if !(n0 > 0.0 && n0 < volume) {
        return Err(invalid("n0", format!("need 0 < n0 < N, got n0={n0}, N={volume}")));
    }
    let initial = ChainState::new(alloc::vec![n0, volume - n0])?;
    let pi0 = initial.share(0);
    let ratios: Vec<f64> = final_shares(&initial, schedule, horizon, runs, seed, 0)?
        .into_iter()
        .map(|p| p / pi0)
        .collect();
    let deviating = ratios
        .iter()
        .filter(|r| (**r - 1.0).abs() > epsilon)
        .count();
    let summary = summarize(&ratios, &[])?;
    Ok(PhaseSweepRow {
        volume,
        n0,
        epsilon,
        dev_prob: deviating as f64 / runs as f64,
        ratio_var: summary.variance,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn summarize_examples() {
        let s = summarize(&[1.0, 1.0, 1.0], &[0.5]).unwrap();
        assert_eq!((s.count, s.mean, s.variance), (3, 1.0, 0.0));
        assert_eq!(s.tail(0.5), Some(1.0));
        let s = summarize(&[0.0, 2.0], &[1.0]).unwrap();
        assert_eq!((s.mean, s.variance), (1.0, 2.0));
        assert_eq!(s.tail(1.0), Some(0.5));
        assert_eq!(summarize(&[], &[1.0]), Err(Error::EmptyInput));
    }

    #[test]
    fn ks_one_point() {
        let d = ks_distance(&[0.5], |x| x.clamp(0.0, 1.0)).unwrap();
        assert_eq!(d, 0.5);
        assert_eq!(ks_distance(&[], |x| x), Err(Error::EmptyInput));
    }

    #[test]
    fn ks_exact_quantiles_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_distance(&xs, |x| x).unwrap();
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[0.5], 1, 0.0, 1.0).unwrap();
        assert_eq!(h.counts, vec![1]);
        let h = histogram(&[0.1, 0.9], 2, 0.0, 1.0).unwrap();
        assert_eq!(h.counts, vec![1, 1]);
        assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);
        let h = histogram(&[-1.0, 0.2, 1.0, 3.0], 4, 0.0, 1.0).unwrap();
        assert_eq!((h.underflow, h.overflow, h.in_range()), (1, 2, 1));
        assert!(matches!(
            histogram(&[0.1], 2, 1.0, 0.0),
            Err(Error::InvalidRange { .. })
        ));
        assert!(histogram(&[0.1], 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn sweep_validates() {
        let s = RewardSchedule::Constant { reward: 1.0 };
        assert!(phase_sweep(&s, &[1.0], &[100.0], 0.5, 10, 50, 0).is_err());
        assert!(phase_sweep(&s, &[], &[100.0], 0.5, 10, 100, 0).is_err());
        assert!(phase_sweep(&s, &[200.0], &[100.0], 0.5, 10, 100, 0).is_err());
        let rows = phase_sweep(&s, &[1.0, 10.0], &[100.0], 0.5, 10, 100, 0).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.dev_prob)));
    }
}
