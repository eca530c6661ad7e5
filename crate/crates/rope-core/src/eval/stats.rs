//! Evaluation statistics: relative mean absolute error, interquartile mean,
//! percentile-bootstrap confidence intervals, and performance profiles.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `|rho_e - estimate| / |rho_e - rho_rand|`.
pub fn rmae(estimate: f64, rho_e: f64, rho_rand: f64) -> Result<f64> {
    let denom = (rho_e - rho_rand).abs();
    if denom == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok((rho_e - estimate).abs() / denom)
}

/// Interquartile mean with fractional trimming: the mean of the middle 50%
/// of the sorted values, weighting the two cut elements linearly so small
/// sample counts behave smoothly.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::validation("iqm of an empty list".to_string()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaNs in iqm input"));
    let n = sorted.len() as f64;
    let lo = 0.25 * n;
    let hi = 0.75 * n;
    let mut weighted = 0.0;
    let mut weight = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        // Overlap of [i, i+1) with the trimmed window [lo, hi).
        let w = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
        weighted += w * v;
        weight += w;
    }
    Ok(weighted / weight)
}

/// Median via midpoint of the two central order statistics.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::validation("median of an empty list".to_string()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaNs in median input"));
    let n = sorted.len();
    if n % 2 == 1 {
        Ok(sorted[n / 2])
    } else {
        Ok(0.5 * (sorted[n / 2 - 1] + sorted[n / 2]))
    }
}

/// Percentile bootstrap interval of the IQM statistic, deterministic per
/// seed. `level` is the two-sided coverage, e.g. 0.95.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::validation("bootstrap of an empty list".to_string()));
    }
    if resamples < 1000 {
        return Err(Error::validation(
            "bootstrap needs at least 1000 resamples".to_string(),
        ));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(Error::validation("level must lie in (0, 1)".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(resamples);
    let mut resample = vec![0.0; values.len()];
    for _ in 0..resamples {
        for slot in resample.iter_mut() {
            *slot = values[rng.gen_range(0..values.len())];
        }
        stats.push(iqm(&resample)?);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).expect("finite stats"));
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile(&stats, alpha), quantile(&stats, 1.0 - alpha)))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let idx = pos.floor() as usize;
    let frac = pos - idx as f64;
    if idx + 1 < n {
        sorted[idx] * (1.0 - frac) + sorted[idx + 1] * frac
    } else {
        sorted[n - 1]
    }
}

/// For each threshold, the fraction of runs with error strictly below it.
/// Thresholds must be sorted ascending; the curve is then nondecreasing and
/// bounded in [0, 1].
pub fn performance_profile(rmae_values: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::validation(
            "thresholds must be sorted ascending".to_string(),
        ));
    }
    let n = rmae_values.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let frac = if rmae_values.is_empty() {
                0.0
            } else {
                rmae_values.iter().filter(|&&v| v < t).count() as f64 / n
            };
            (t, frac)
        })
        .collect())
}
