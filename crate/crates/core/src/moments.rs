//! Second moments of `X(1)` and `X(2)` for a deterministic initial segment.
//!
//! By the Itô isometry `m(t) = E X(t)²` satisfies
//! `m(t) = η(0)² + ∫_0^t m(s - 1) ds`, which closes after two steps:
//!
//! ```text
//! m(1) = η(0)² + ∫ η²
//! m(2) = 2 η(0)² + ∫ η² + ∫ (-u) η(u)² du
//! ```
//!
//! (integrals over `[-1, 0]`). For `η ≡ 1` these are `2` and `3.5`. The
//! Euler–Maruyama grid satisfies the discrete analogue
//! `m_{k+1} = m_k + h m_{k-N}` exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::initial::InitialCondition;
use crate::integrator::advance_unit;
use crate::noise::{draw_noise, stream_id, NoiseStream};
use crate::segment::Segment;
use crate::stats::mean_and_se;

pub const DEFAULT_PATHS: usize = 100_000;
pub const DEFAULT_REFERENCE_RESOLUTION: usize = 512;

fn trapezoid(seg: &Segment, f: impl Fn(f64, f64) -> f64) -> f64 {
    let n = seg.resolution();
    let h = seg.step();
    seg.values()
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            w * f(-1.0 + k as f64 * h, v)
        })
        .sum::<f64>()
        * h
}

/// `(E X(1)², E X(2)²)` of the exact solution, with the integrals of `η`
/// taken by the trapezoid rule on its grid.
pub fn ito_second_moments(eta: &Segment) -> (f64, f64) {
    let head_sq = eta.head().powi(2);
    let int_sq = trapezoid(eta, |_, v| v * v);
    let int_weighted = trapezoid(eta, |u, v| -u * v * v);
    (head_sq + int_sq, 2.0 * head_sq + int_sq + int_weighted)
}

/// `(E x_N², E x_{2N}²)` of the Euler–Maruyama scheme on `eta`'s grid.
pub fn scheme_second_moments(eta: &Segment) -> (f64, f64) {
    let n = eta.resolution();
    let h = eta.step();
    let mut m: Vec<f64> = eta.values().iter().map(|v| v * v).collect();
    for k in 0..2 * n {
        let next = m[n + k] + h * m[k];
        m.push(next);
    }
    (m[2 * n], m[3 * n])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    pub eta: InitialCondition,
    pub resolution: usize,
    pub paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub time: u32,
    pub mean: f64,
    pub standard_error: f64,
    pub oracle: f64,
}

impl MomentEstimate {
    /// `|mean - oracle| <= k · SE`.
    pub fn within(&self, k: f64) -> bool {
        (self.mean - self.oracle).abs() <= k * self.standard_error
    }

    pub fn z_score(&self) -> f64 {
        (self.mean - self.oracle) / self.standard_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub eta: String,
    pub resolution: usize,
    pub paths: usize,
    pub seed: u64,
    pub estimates: [MomentEstimate; 2],
    /// Exact scheme expectations `(E x_N², E x_{2N}²)`.
    pub scheme: (f64, f64),
}

impl MomentReport {
    pub fn all_within(&self, k: f64) -> bool {
        self.estimates.iter().all(|e| e.within(k))
    }
}

/// `(X(1), X(2))` on the path driven by `noise` at resolution `n`, with the
/// Brownian path drawn at resolution `fine` and aggregated.
fn endpoint_values(eta: &Segment, noise: &mut NoiseStream, fine: usize) -> Result<(f64, f64)> {
    let factor = fine / eta.resolution();
    let b1 = draw_noise(noise, fine)?.coarsen(factor)?;
    let b2 = draw_noise(noise, fine)?.coarsen(factor)?;
    let x1 = advance_unit(eta, &b1)?;
    let x2 = advance_unit(&x1, &b2)?;
    Ok((x1.head(), x2.head()))
}

fn check_paths(paths: usize) -> Result<()> {
    if paths < 2 {
        return Err(SimError::param("paths", format!("need at least 2, got {paths}")));
    }
    Ok(())
}

/// Monte Carlo `E X(1)²`, `E X(2)²` against the Itô-isometry values.
/// Path `p` uses stream `stream_id(0, p)`.
pub fn run_moments(cfg: &MomentConfig) -> Result<MomentReport> {
    check_paths(cfg.paths)?;
    let eta = cfg.eta.to_segment(cfg.resolution)?;
    let samples: Vec<(f64, f64)> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let mut noise = NoiseStream::new(cfg.seed, stream_id(0, p as u32));
            let (a, b) = endpoint_values(&eta, &mut noise, cfg.resolution)?;
            Ok((a * a, b * b))
        })
        .collect::<Result<_>>()?;
    let (s1, s2): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
    let oracle = ito_second_moments(&eta);
    let estimate = |time, xs: &[f64], oracle| {
        let (mean, standard_error) = mean_and_se(xs);
        MomentEstimate {
            time,
            mean,
            standard_error,
            oracle,
        }
    };
    Ok(MomentReport {
        eta: cfg.eta.to_string(),
        resolution: cfg.resolution,
        paths: cfg.paths,
        seed: cfg.seed,
        estimates: [estimate(1, &s1, oracle.0), estimate(2, &s2, oracle.1)],
        scheme: scheme_second_moments(&eta),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub resolution: usize,
    /// `E[X_N(2)² - X_ref(2)²]` estimated with common Brownian paths.
    pub bias: f64,
    pub standard_error: f64,
    /// Exact scheme bias `E x_{2N}² - m(2)` for comparison.
    pub scheme_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub eta: String,
    pub reference_resolution: usize,
    pub paths: usize,
    pub seed: u64,
    pub rows: Vec<BiasRow>,
}

impl RefinementReport {
    /// `|bias|` strictly shrinks along the rows (ordered by increasing `N`).
    pub fn bias_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].bias.abs() < w[0].bias.abs())
    }
}

/// Weak-error study for `E X(2)²`: every resolution in `resolutions` and the
/// reference resolution see the same Brownian paths, so the bias of each
/// coarse grid relative to the reference is resolved far below the
/// Monte Carlo error of the moments themselves.
pub fn refinement_bias(
    eta: &InitialCondition,
    resolutions: &[usize],
    reference: usize,
    paths: usize,
    seed: u64,
) -> Result<RefinementReport> {
    check_paths(paths)?;
    for &n in resolutions {
        if n < 2 || !reference.is_multiple_of(n) || n >= reference {
            return Err(SimError::param(
                "resolutions",
                format!("{n} must be >= 2 and a proper divisor of the reference {reference}"),
            ));
        }
    }
    let fine_eta = eta.to_segment(reference)?;
    let coarse: Vec<Segment> = resolutions.iter().map(|&n| eta.to_segment(n)).collect::<Result<_>>()?;
    let diffs: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let start = NoiseStream::new(seed, stream_id(0, p as u32));
            let mut noise = start.clone();
            let (_, reference_x2) = endpoint_values(&fine_eta, &mut noise, reference)?;
            coarse
                .iter()
                .map(|c| {
                    let mut noise = start.clone();
                    let (_, x2) = endpoint_values(c, &mut noise, reference)?;
                    Ok(x2 * x2 - reference_x2 * reference_x2)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let rows = coarse
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let column: Vec<f64> = diffs.iter().map(|d| d[i]).collect();
            let (bias, standard_error) = mean_and_se(&column);
            BiasRow {
                resolution: c.resolution(),
                bias,
                standard_error,
                scheme_bias: scheme_second_moments(c).1 - ito_second_moments(c).1,
            }
        })
        .collect();
    Ok(RefinementReport {
        eta: eta.to_string(),
        reference_resolution: reference,
        paths,
        seed,
        rows,
    })
}
