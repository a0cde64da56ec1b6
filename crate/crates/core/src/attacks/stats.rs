//! Binomial intervals and a geometric goodness-of-fit test.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Wilson score interval for `k` successes in `n` trials at normal quantile `z`.
pub fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// `p ± k·sqrt(p(1-p)/n)`, the band an observed rate should fall in.
pub fn sigma_band(p: f64, n: u64, k: f64) -> (f64, f64) {
    let s = (p * (1.0 - p) / n as f64).sqrt();
    (p - k * s, p + k * s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    /// Bins as `(lower bound, observed, expected)`; the last bin is a tail.
    pub bins: Vec<(u64, u64, f64)>,
}

impl ChiSquare {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

/// Pearson test of a histogram over `1, 2, …` against a geometric law with
/// per-trial success probability `p`. Bins with expected count below 5 are
/// merged into the tail.
pub fn chi_square_geometric(hist: &BTreeMap<u64, u64>, p: f64) -> ChiSquare {
    let n: u64 = hist.values().sum();
    let nf = n as f64;
    let mut bins = Vec::new();
    let mut k = 1u64;
    let mut tail_prob = 1.0;
    loop {
        let pk = p * (1.0 - p).powi(k as i32 - 1);
        let tail_after = tail_prob - pk;
        if nf * pk < 5.0 || nf * tail_after < 5.0 {
            break;
        }
        bins.push((k, *hist.get(&k).unwrap_or(&0), nf * pk));
        tail_prob = tail_after;
        k += 1;
    }
    let tail_obs: u64 = hist.range(k..).map(|(_, c)| c).sum();
    bins.push((k, tail_obs, nf * tail_prob));
    let statistic = bins
        .iter()
        .map(|(_, o, e)| (*o as f64 - e).powi(2) / e)
        .sum::<f64>();
    let df = bins.len().saturating_sub(1).max(1) as u32;
    let p_value = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(statistic);
    ChiSquare {
        statistic,
        df,
        p_value,
        bins,
    }
}
