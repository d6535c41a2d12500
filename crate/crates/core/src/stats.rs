//! Small statistical helpers: batch means, regression slopes, two-sample
//! Kolmogorov–Smirnov, autocorrelation and effective sample size.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Mean of a time series with its batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchMeans {
    pub mean: f64,
    pub standard_error: f64,
    pub batches: usize,
}

/// Splits `series` into `batches` contiguous blocks of equal length (any
/// remainder at the end only enters the overall mean) and returns the mean
/// with `sd(batch means) / sqrt(batches)`.
pub fn batch_means_ci(series: &[f64], batches: usize) -> Result<BatchMeans> {
    if batches < 2 {
        return Err(SimError::param("batches", format!("need at least 2, got {batches}")));
    }
    if series.len() < 2 * batches {
        return Err(SimError::InsufficientData(format!(
            "{} points cannot fill {batches} batches of at least 2",
            series.len()
        )));
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let size = series.len() / batches;
    let block_means: Vec<f64> = series
        .chunks_exact(size)
        .take(batches)
        .map(|b| b.iter().sum::<f64>() / size as f64)
        .collect();
    let grand = block_means.iter().sum::<f64>() / batches as f64;
    let var = block_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok(BatchMeans {
        mean,
        standard_error: (var / batches as f64).sqrt(),
        batches,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Mean and standard error of i.i.d. samples.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    (mean(xs), (variance(xs) / xs.len() as f64).sqrt())
}

/// Ordinary least squares fit `y ≈ a + b x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    /// Classical standard error of the slope (i.i.d. residuals).
    pub slope_se: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(SimError::InsufficientData(format!(
            "linear fit needs >= 3 paired points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(SimError::InsufficientData("linear fit with constant abscissa".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(LinearFit {
        intercept,
        slope,
        slope_se: (rss / (n - 2.0) / sxx).sqrt(),
    })
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(SimError::InsufficientData("KS distance of an empty sample".into()));
    }
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0_f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Asymptotic two-sample KS critical value at level `alpha` for sample sizes
/// `n` and `m` (which may be effective, non-integer sizes).
pub fn ks_critical_value(alpha: f64, n: f64, m: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() * ((n + m) / (n * m)).sqrt()
}

/// Sample autocorrelations at lags `0..=max_lag`.
pub fn autocorrelation(xs: &[f64], max_lag: usize) -> Vec<f64> {
    let n = xs.len();
    let m = mean(xs);
    let c0: f64 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|k| {
            if c0 == 0.0 {
                return if k == 0 { 1.0 } else { 0.0 };
            }
            let ck: f64 = xs[..n - k]
                .iter()
                .zip(&xs[k..])
                .map(|(a, b)| (a - m) * (b - m))
                .sum::<f64>()
                / n as f64;
            ck / c0
        })
        .collect()
}

/// Integrated autocorrelation time `1 + 2 Σ ρ_k`, truncated with Geyer's
/// initial positive sequence rule and floored at one.
pub fn integrated_autocorrelation_time(xs: &[f64]) -> f64 {
    if xs.len() < 4 {
        return 1.0;
    }
    let rho = autocorrelation(xs, xs.len() / 2);
    let mut tau = -1.0;
    let mut k = 0;
    while k + 1 < rho.len() {
        let pair = rho[k] + rho[k + 1];
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    tau.max(1.0)
}

/// `n / τ`, the effective number of independent samples.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    xs.len() as f64 / integrated_autocorrelation_time(xs)
}

/// Energy distance between two planar point clouds:
/// `2 E|X-Y| - E|X-X'| - E|Y-Y'|`.
pub fn energy_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(SimError::InsufficientData("energy distance of an empty sample".into()));
    }
    let dist = |p: &[f64; 2], q: &[f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    let mean_cross = |u: &[[f64; 2]], v: &[[f64; 2]]| {
        u.iter().map(|p| v.iter().map(|q| dist(p, q)).sum::<f64>()).sum::<f64>()
            / (u.len() * v.len()) as f64
    };
    Ok(2.0 * mean_cross(a, b) - mean_cross(a, a) - mean_cross(b, b))
}
