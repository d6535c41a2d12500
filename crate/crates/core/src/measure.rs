//! Empirical picture of the invariant law of the sphere process
//! `S_t = X_t / ‖X_t‖`.
//!
//! Snapshots of the running unit segment are taken at integer times
//! `burn_in, burn_in + thin, ...` and compared through one-dimensional
//! marginals (KS distance at fixed coordinates) and the joint law of
//! `(s(-1), s(0))` (energy distance). Tightness is probed through the
//! modulus of continuity.

use std::collections::VecDeque;
use std::io::{Read, Write};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::integrator::Trajectory;
use crate::lyapunov::LabeledSegment;
use crate::noise::{stream_id, NoiseStream};
use crate::segment::{Segment, UnitSegment};
use crate::stats;

pub const DEFAULT_BURN_IN: u64 = 200;
pub const DEFAULT_THIN: u64 = 5;
pub const DEFAULT_COORDS: [f64; 3] = [-1.0, -0.5, 0.0];
pub const DEFAULT_DELTAS: [f64; 4] = [1.0, 0.5, 0.25, 0.125];
pub const MIN_TIGHTNESS_SAMPLES: usize = 100;
/// Tolerance of the stored unit-norm invariant.
pub const SNAPSHOT_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub horizon: u64,
    pub burn_in: u64,
    pub thin: u64,
}

impl SamplingConfig {
    pub fn new(horizon: u64) -> Self {
        Self {
            horizon,
            burn_in: DEFAULT_BURN_IN,
            thin: DEFAULT_THIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(SimError::param("thin", "must be positive"));
        }
        if self.horizon <= self.burn_in {
            return Err(SimError::param(
                "T",
                format!("must exceed burn_in ({} <= {})", self.horizon, self.burn_in),
            ));
        }
        Ok(())
    }

    /// Snapshot times `burn_in, burn_in + thin, ... <= horizon`.
    pub fn snapshot_times(&self) -> impl Iterator<Item = u64> + '_ {
        (self.burn_in..=self.horizon).step_by(self.thin as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub eta_label: String,
    pub seed: u64,
    pub stream: u64,
    pub horizon: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereSampleSet {
    pub samples: Vec<UnitSegment>,
    pub coords: Vec<f64>,
    pub provenance: Provenance,
}

/// Samples the sphere process started at `eta`.
pub fn sample_sphere_path(
    eta: &Segment,
    label: &str,
    cfg: &SamplingConfig,
    seed: u64,
    stream: u64,
) -> Result<SphereSampleSet> {
    cfg.validate()?;
    if eta.is_zero() {
        return Err(SimError::ZeroState);
    }
    let mut traj = Trajectory::new(eta, NoiseStream::new(seed, stream))?;
    let mut samples = Vec::new();
    for t in cfg.snapshot_times() {
        while traj.state().t < t {
            traj.advance()?;
        }
        samples.push(traj.state().segment.clone());
    }
    Ok(SphereSampleSet {
        samples,
        coords: DEFAULT_COORDS.to_vec(),
        provenance: Provenance {
            eta_label: label.to_string(),
            seed,
            stream,
            horizon: cfg.horizon,
            burn_in: cfg.burn_in,
            thin: cfg.thin,
            resolution: eta.resolution(),
        },
    })
}

/// Samples each initial condition on its own stream `stream_id(i, 0)`.
pub fn sample_many(etas: &[LabeledSegment], cfg: &SamplingConfig, seed: u64) -> Result<Vec<SphereSampleSet>> {
    etas.par_iter()
        .enumerate()
        .map(|(i, e)| sample_sphere_path(&e.segment, &e.label, cfg, seed, stream_id(i as u32, 0)))
        .collect()
}

impl SphereSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.provenance.resolution
    }

    /// Values at the grid point nearest `coord`, in snapshot order.
    pub fn marginal(&self, coord: f64) -> Vec<f64> {
        self.samples.iter().map(|s| s.value_at(coord)).collect()
    }

    /// `(s(-1), s(0))` for every snapshot.
    pub fn endpoint_pairs(&self) -> Vec<[f64; 2]> {
        self.samples.iter().map(|s| [s.lagged(), s.head()]).collect()
    }

    /// Largest deviation of a snapshot's M2 norm from one.
    pub fn max_norm_error(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| (s.m2_norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn unit_norm_holds(&self) -> bool {
        self.max_norm_error() <= SNAPSHOT_NORM_TOLERANCE
    }

    /// Every snapshot multiplied by `-1`.
    pub fn negated(&self) -> Result<SphereSampleSet> {
        let samples = self
            .samples
            .iter()
            .map(|s| UnitSegment::try_new(-s.as_segment(), SNAPSHOT_NORM_TOLERANCE))
            .collect::<Result<_>>()?;
        Ok(SphereSampleSet {
            samples,
            ..self.clone()
        })
    }

    /// Writes the snapshot matrix as CSV: one row per snapshot, columns
    /// `t,v0,...,vN` with `v0 = s(-1)` and `vN = s(0)`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let n = self.resolution();
        let mut header = vec!["t".to_string()];
        header.extend((0..=n).map(|k| format!("v{k}")));
        w.write_record(&header).map_err(csv_err)?;
        let p = &self.provenance;
        for (i, s) in self.samples.iter().enumerate() {
            let t = p.burn_in + i as u64 * p.thin;
            let mut row = vec![t.to_string()];
            row.extend(s.values().iter().map(|v| format!("{v:e}")));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a matrix written by [`write_csv`](Self::write_csv) together with
    /// its provenance sidecar.
    pub fn read_csv<R: Read>(reader: R, provenance: Provenance) -> Result<SphereSampleSet> {
        let mut r = csv::Reader::from_reader(reader);
        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let values = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| SimError::Io(format!("bad value `{v}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let seg = Segment::with_resolution(provenance.resolution, values)?;
            samples.push(UnitSegment::try_new(seg, SNAPSHOT_NORM_TOLERANCE)?);
        }
        Ok(SphereSampleSet {
            samples,
            coords: DEFAULT_COORDS.to_vec(),
            provenance,
        })
    }
}

fn csv_err(e: csv::Error) -> SimError {
    SimError::Io(e.to_string())
}

/// `sup { |f(t) - f(s)| : |t - s| <= δ }` over grid pairs.
///
/// Pairs up to `floor(δN)` grid steps apart are compared; for `δ < h` the
/// one-step modulus is returned and a warning logged.
pub fn modulus_of_continuity(seg: &Segment, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(SimError::param("delta", format!("must lie in (0, 1], got {delta}")));
    }
    let n = seg.resolution();
    let mut m = (delta * n as f64 + 1e-9).floor() as usize;
    if m == 0 {
        warn!("delta {delta} is below the grid step 1/{n}; using the one-step modulus");
        m = 1;
    }
    Ok(window_oscillation(seg.values(), m + 1))
}

/// Largest `max - min` over windows of `width` consecutive values.
fn window_oscillation(v: &[f64], width: usize) -> f64 {
    let mut hi: VecDeque<usize> = VecDeque::new();
    let mut lo: VecDeque<usize> = VecDeque::new();
    let mut best = 0.0_f64;
    for (i, &x) in v.iter().enumerate() {
        while hi.back().is_some_and(|&j| v[j] <= x) {
            hi.pop_back();
        }
        hi.push_back(i);
        while lo.back().is_some_and(|&j| v[j] >= x) {
            lo.pop_back();
        }
        lo.push_back(i);
        if i >= width {
            let start = i + 1 - width;
            while hi.front().is_some_and(|&j| j < start) {
                hi.pop_front();
            }
            while lo.front().is_some_and(|&j| j < start) {
                lo.pop_front();
            }
        }
        best = best.max(v[hi[0]] - v[lo[0]]);
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessRow {
    pub delta: f64,
    pub epsilon: f64,
    /// Fraction of snapshots with `modulus(S, δ) >= ε`.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub samples: usize,
    pub rows: Vec<TightnessRow>,
}

impl TightnessReport {
    /// Fractions for `epsilon`, in the order the deltas were given.
    pub fn column(&self, epsilon: f64) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.epsilon == epsilon)
            .map(|r| (r.delta, r.fraction))
            .collect()
    }

    /// Fractions never increase as δ shrinks.
    pub fn monotone(&self) -> bool {
        let mut eps: Vec<f64> = self.rows.iter().map(|r| r.epsilon).collect();
        eps.dedup();
        eps.iter().all(|&e| {
            let mut col = self.column(e);
            col.sort_by(|a, b| b.0.total_cmp(&a.0));
            col.windows(2).all(|w| w[1].1 <= w[0].1)
        })
    }
}

pub fn tightness_report(set: &SphereSampleSet, deltas: &[f64], epsilons: &[f64]) -> Result<TightnessReport> {
    if set.len() < MIN_TIGHTNESS_SAMPLES {
        return Err(SimError::InsufficientData(format!(
            "tightness report needs >= {MIN_TIGHTNESS_SAMPLES} snapshots, got {}",
            set.len()
        )));
    }
    let mut rows = Vec::with_capacity(deltas.len() * epsilons.len());
    for &epsilon in epsilons {
        for &delta in deltas {
            let mut hits = 0usize;
            for s in &set.samples {
                if modulus_of_continuity(s, delta)? >= epsilon {
                    hits += 1;
                }
            }
            rows.push(TightnessRow {
                delta,
                epsilon,
                fraction: hits as f64 / set.len() as f64,
            });
        }
    }
    Ok(TightnessReport {
        samples: set.len(),
        rows,
    })
}

/// Two-sample KS statistic between the marginals of `a` and `b` at `coord`.
pub fn marginal_distance(a: &SphereSampleSet, b: &SphereSampleSet, coord: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(SimError::InsufficientData("marginal distance of an empty sample set".into()));
    }
    stats::ks_two_sample(&a.marginal(coord), &b.marginal(coord))
}

/// KS comparison with critical value computed from effective sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTest {
    pub coord: f64,
    pub statistic: f64,
    pub alpha: f64,
    pub iat_a: f64,
    pub iat_b: f64,
    pub ess_a: f64,
    pub ess_b: f64,
    pub critical: f64,
    pub passes: bool,
}

pub fn marginal_test(a: &SphereSampleSet, b: &SphereSampleSet, coord: f64, alpha: f64) -> Result<MarginalTest> {
    let statistic = marginal_distance(a, b, coord)?;
    let (ma, mb) = (a.marginal(coord), b.marginal(coord));
    let (iat_a, iat_b) = (
        stats::integrated_autocorrelation_time(&ma),
        stats::integrated_autocorrelation_time(&mb),
    );
    let (ess_a, ess_b) = (ma.len() as f64 / iat_a, mb.len() as f64 / iat_b);
    let critical = stats::ks_critical_value(alpha, ess_a, ess_b);
    Ok(MarginalTest {
        coord,
        statistic,
        alpha,
        iat_a,
        iat_b,
        ess_a,
        ess_b,
        critical,
        passes: statistic < critical,
    })
}

/// Energy distance between the `(s(-1), s(0))` clouds of two sets.
pub fn endpoint_energy_distance(a: &SphereSampleSet, b: &SphereSampleSet) -> Result<f64> {
    stats::energy_distance(&a.endpoint_pairs(), &b.endpoint_pairs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinningReport {
    pub coord: f64,
    /// Autocorrelations of the coordinate series at lags `0..`.
    pub autocorrelation: Vec<f64>,
    pub integrated_time: f64,
    pub effective_samples: f64,
}

pub fn thinning_report(set: &SphereSampleSet, coord: f64, max_lag: usize) -> ThinningReport {
    let xs = set.marginal(coord);
    ThinningReport {
        coord,
        autocorrelation: stats::autocorrelation(&xs, max_lag),
        integrated_time: stats::integrated_autocorrelation_time(&xs),
        effective_samples: stats::effective_sample_size(&xs),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureLambda {
    pub estimate: f64,
    /// `sd · sqrt(τ / n)` with `τ` the integrated autocorrelation time.
    pub standard_error: f64,
    pub samples: usize,
}

/// Spatial average of `psi = f/2 - g²/4` over the snapshots.
pub fn lambda_from_measure(set: &SphereSampleSet) -> Result<MeasureLambda> {
    if set.is_empty() {
        return Err(SimError::InsufficientData("no snapshots".into()));
    }
    let psi: Vec<f64> = set.samples.iter().map(|s| s.psi()).collect();
    let n = psi.len() as f64;
    let sd = stats::variance(&psi).sqrt();
    Ok(MeasureLambda {
        estimate: stats::mean(&psi),
        standard_error: sd * (stats::integrated_autocorrelation_time(&psi) / n).sqrt(),
        samples: psi.len(),
    })
}

/// Running mean of `g²` over the first `k` snapshots for each `k` in `checkpoints`.
pub fn g_squared_means(set: &SphereSampleSet, checkpoints: &[usize]) -> Vec<(usize, f64)> {
    let g2: Vec<f64> = set.samples.iter().map(|s| s.g().powi(2)).collect();
    checkpoints
        .iter()
        .filter(|&&k| k > 0 && k <= g2.len())
        .map(|&k| (k, g2[..k].iter().sum::<f64>() / k as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalRange {
    pub coord: f64,
    pub min: f64,
    pub max: f64,
}

/// Observed range of each configured coordinate.
pub fn marginal_ranges(set: &SphereSampleSet) -> Vec<MarginalRange> {
    set.coords
        .iter()
        .map(|&coord| {
            let xs = set.marginal(coord);
            MarginalRange {
                coord,
                min: xs.iter().copied().fold(f64::INFINITY, f64::min),
                max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_modulus(v: &[f64], m: usize) -> f64 {
        let mut best = 0.0_f64;
        for i in 0..v.len() {
            for j in i..v.len().min(i + m + 1) {
                best = best.max((v[i] - v[j]).abs());
            }
        }
        best
    }

    fn small_set(seed: u64) -> SphereSampleSet {
        let eta = Segment::constant(32, 1.0).unwrap();
        let cfg = SamplingConfig {
            horizon: 700,
            burn_in: 200,
            thin: 5,
        };
        sample_sphere_path(&eta, "const:1", &cfg, seed, 0).unwrap()
    }

    #[test]
    fn modulus_examples() {
        let c = Segment::constant(16, 0.3).unwrap();
        for d in [0.01, 0.125, 0.5, 1.0] {
            assert_eq!(modulus_of_continuity(&c, d).unwrap(), 0.0);
        }
        let lin = Segment::from_fn(16, |s| s).unwrap();
        for d in [0.125, 0.25, 0.5, 1.0] {
            assert!((modulus_of_continuity(&lin, d).unwrap() - d).abs() < 1e-12);
        }
        // Within grid rounding: δ = 0.2 sees three steps of 1/16.
        assert!((modulus_of_continuity(&lin, 0.2).unwrap() - 0.1875).abs() < 1e-12);
        let wave = Segment::from_fn(16, |s| (7.0 * s).sin()).unwrap();
        let osc = wave.values().iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - wave.values().iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(modulus_of_continuity(&wave, 1.0).unwrap(), osc);
        // Below the grid step: one-step modulus.
        assert_eq!(
            modulus_of_continuity(&wave, 0.01).unwrap(),
            modulus_of_continuity(&wave, 1.0 / 16.0).unwrap()
        );
        assert!(modulus_of_continuity(&wave, 0.0).is_err());
        assert!(modulus_of_continuity(&wave, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn modulus_matches_brute_force(v in prop::collection::vec(-5.0f64..5.0, 3..40), frac in 0.01f64..1.0) {
            let seg = Segment::new(v.clone()).unwrap();
            let n = seg.resolution();
            let m = ((frac * n as f64 + 1e-9).floor() as usize).max(1);
            let fast = modulus_of_continuity(&seg, frac).unwrap();
            prop_assert_eq!(fast, brute_modulus(&v, m));
        }

        #[test]
        fn modulus_sign_invariant(v in prop::collection::vec(-5.0f64..5.0, 3..40), frac in 0.01f64..1.0) {
            let seg = Segment::new(v).unwrap();
            prop_assert_eq!(modulus_of_continuity(&seg, frac).unwrap(), modulus_of_continuity(&-&seg, frac).unwrap());
        }
    }

    #[test]
    fn snapshots_are_unit_and_bounded() {
        let set = small_set(3);
        assert_eq!(set.len(), 101);
        assert!(set.unit_norm_holds(), "{}", set.max_norm_error());
        assert!(set.marginal(0.0).iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn negated_eta_gives_negated_snapshots() {
        let eta = Segment::from_fn(16, |s| (3.0 * s).cos()).unwrap();
        let cfg = SamplingConfig {
            horizon: 300,
            burn_in: 200,
            thin: 5,
        };
        let a = sample_sphere_path(&eta, "a", &cfg, 11, 0).unwrap();
        let b = sample_sphere_path(&-&eta, "b", &cfg, 11, 0).unwrap();
        assert_eq!(b.samples, a.negated().unwrap().samples);
        assert_eq!(lambda_from_measure(&a).unwrap().estimate, lambda_from_measure(&b).unwrap().estimate);
    }

    #[test]
    fn sampling_validation() {
        let eta = Segment::constant(8, 1.0).unwrap();
        let cfg = SamplingConfig::new(100);
        assert!(sample_sphere_path(&eta, "x", &cfg, 1, 0).is_err());
        let zero = Segment::zeros(8).unwrap();
        let cfg = SamplingConfig::new(300);
        assert!(matches!(sample_sphere_path(&zero, "0", &cfg, 1, 0), Err(SimError::ZeroState)));
        let cfg = SamplingConfig { thin: 0, ..SamplingConfig::new(300) };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn distance_examples() {
        let a = small_set(1);
        let b = small_set(2);
        assert_eq!(marginal_distance(&a, &a, 0.0).unwrap(), 0.0);
        let mut short = a.clone();
        short.samples.pop();
        let d = marginal_distance(&a, &short, 0.0).unwrap();
        assert!(d <= 1.0 / short.len() as f64 + 1e-12, "{d}");
        for coord in DEFAULT_COORDS {
            assert_eq!(
                marginal_distance(&a, &b, coord).unwrap(),
                marginal_distance(&b, &a, coord).unwrap()
            );
        }
        let mut empty = a.clone();
        empty.samples.clear();
        assert!(marginal_distance(&a, &empty, 0.0).is_err());
    }

    #[test]
    fn tightness_is_monotone_in_delta() {
        let set = small_set(4);
        let report = tightness_report(&set, &DEFAULT_DELTAS, &[0.1, 0.5, 1.0]).unwrap();
        assert!(report.monotone());
        assert!(report.rows.iter().all(|r| (0.0..=1.0).contains(&r.fraction)));
        let h = 1.0 / 32.0;
        let fine = tightness_report(&set, &[2.0 * h, h], &[0.05]).unwrap();
        assert!(fine.rows[1].fraction <= fine.rows[0].fraction);

        let mut few = set.clone();
        few.samples.truncate(50);
        assert!(tightness_report(&few, &DEFAULT_DELTAS, &[0.5]).is_err());
    }

    #[test]
    fn lambda_from_zero_head_snapshots() {
        let seg = Segment::from_fn(16, |s| -s).unwrap();
        let (unit, _) = seg.project().unwrap();
        let mut set = small_set(5);
        set.samples = vec![unit; 10];
        assert_eq!(lambda_from_measure(&set).unwrap().estimate, 0.0);
    }

    #[test]
    fn lambda_from_measure_bounded() {
        let set = small_set(6);
        let est = lambda_from_measure(&set).unwrap();
        assert!(est.estimate <= 0.5);
        assert!(est.standard_error > 0.0);
    }

    #[test]
    fn csv_roundtrip() {
        let set = small_set(7);
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let back = SphereSampleSet::read_csv(&buf[..], set.provenance.clone()).unwrap();
        assert_eq!(back.samples, set.samples);
    }

    #[test]
    fn ranges_within_unit_interval() {
        let set = small_set(8);
        let ranges = marginal_ranges(&set);
        assert_eq!(ranges.len(), 3);
        assert!(ranges.iter().all(|r| r.min <= r.max));
        // Only the head is bounded by the M2 norm.
        let head = ranges.iter().find(|r| r.coord == 0.0).unwrap();
        assert!(-1.0 <= head.min && head.max <= 1.0);
        let g2 = g_squared_means(&set, &[10, 50, 101, 500]);
        assert_eq!(g2.len(), 3);
        assert!(g2.iter().all(|(_, m)| m.is_finite()));
    }
}
