//! Growth-rate estimation.
//!
//! Three estimators of `Λ = lim (1/t) log ‖X_t‖` are computed from a single
//! trajectory:
//!
//! * `direct_m2`: mean per-interval increment of `log ‖X_n‖`;
//! * `direct_sup`: the same for the sup-norm `log ‖X_n‖`;
//! * `furstenberg`: time average of `psi(S_t) = f(S_t)/2 - g(S_t)²/4` over
//!   every grid time, where `S_t` is the M2-normalized segment.
//!
//! The first `burn_in` unit intervals are discarded. Standard errors come from
//! batch means over the per-interval series.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::integrator::Trajectory;
use crate::noise::{stream_id, NoiseStream};
use crate::segment::{psi_from_parts, Segment};
use crate::stats::batch_means_ci;

pub const DEFAULT_BURN_IN: u64 = 50;
pub const DEFAULT_BATCHES: usize = 20;
pub const MIN_HORIZON: u64 = 100;
pub const MIN_BATCHES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DirectM2,
    DirectSup,
    Furstenberg,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::DirectM2, Method::DirectSup, Method::Furstenberg];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::DirectM2 => "direct_m2",
            Method::DirectSup => "direct_sup",
            Method::Furstenberg => "furstenberg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    M2,
    Sup,
}

/// Horizon and averaging parameters of one estimation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Number of unit intervals simulated.
    pub horizon: u64,
    pub burn_in: u64,
    pub batches: usize,
}

impl EstimatorConfig {
    pub fn new(horizon: u64) -> Self {
        Self {
            horizon,
            burn_in: DEFAULT_BURN_IN,
            batches: DEFAULT_BATCHES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < MIN_HORIZON {
            return Err(SimError::param("T", format!("must be >= {MIN_HORIZON}, got {}", self.horizon)));
        }
        if self.batches < MIN_BATCHES {
            return Err(SimError::param("batches", format!("must be >= {MIN_BATCHES}, got {}", self.batches)));
        }
        let kept = self.horizon.saturating_sub(self.burn_in);
        if kept < 2 * self.batches as u64 {
            return Err(SimError::InsufficientData(format!(
                "T - burn_in = {kept} intervals cannot fill {} batches",
                self.batches
            )));
        }
        Ok(())
    }
}

/// One growth-rate estimate with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub standard_error: f64,
    pub batch_count: usize,
    pub horizon_t: u64,
    pub burn_in: u64,
    pub resolution_n: usize,
    pub method: Method,
    pub seed: u64,
    pub stream: u64,
    pub initial_condition_label: String,
}

impl EstimateReport {
    /// True when `estimate - k·SE` exceeds the upper bound `1/2`.
    pub fn exceeds_upper_bound(&self, k: f64) -> bool {
        self.estimate - k * self.standard_error > 0.5
    }
}

/// Per-interval series of one trajectory after burn-in.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthSeries {
    pub log_growth_m2: Vec<f64>,
    pub log_growth_sup: Vec<f64>,
    pub psi_mean: Vec<f64>,
}

/// Average of `psi` over the grid times `t + k h`, `k = 0..N-1`, inside the
/// unit interval that takes `prev` (the segment at `t`) to `next` (the
/// segment at `t + 1`, in the same scale as `prev`).
///
/// The segment at `t + k h` is the window `prev[k..=N] ++ next[1..=k]`; its
/// trapezoidal L2 mass is read off prefix sums, so the whole interval costs
/// `O(N)`.
pub fn interval_psi_mean(prev: &Segment, next: &Segment) -> f64 {
    let n = prev.resolution();
    let h = prev.step();
    let p = prev.values();
    let q = next.values();
    let prefix = |v: &[f64]| {
        let mut acc = Vec::with_capacity(v.len() + 1);
        acc.push(0.0);
        let mut s = 0.0;
        for x in v {
            s += x * x;
            acc.push(s);
        }
        acc
    };
    let pp = prefix(p);
    let qq = prefix(q);
    let mut total = 0.0;
    for k in 0..n {
        let lagged = p[k];
        let head = if k == 0 { p[n] } else { q[k] };
        let sum_sq = (pp[n + 1] - pp[k]) + (qq[k + 1] - qq[1]);
        let l2 = h * (sum_sq - 0.5 * lagged * lagged - 0.5 * head * head);
        total += psi_from_parts(head, lagged, head * head + l2);
    }
    total / n as f64
}

/// Simulates `cfg.horizon` unit intervals from `eta` and returns the
/// per-interval series after burn-in.
pub fn growth_series(eta: &Segment, cfg: &EstimatorConfig, noise: NoiseStream) -> Result<GrowthSeries> {
    cfg.validate()?;
    let mut traj = Trajectory::new(eta, noise)?;
    let kept = (cfg.horizon - cfg.burn_in) as usize;
    let mut series = GrowthSeries {
        log_growth_m2: Vec::with_capacity(kept),
        log_growth_sup: Vec::with_capacity(kept),
        psi_mean: Vec::with_capacity(kept),
    };
    for _ in 0..cfg.horizon {
        let tr = traj.advance()?;
        if tr.prev.t < cfg.burn_in {
            continue;
        }
        let next = &traj.state().segment;
        series.log_growth_m2.push(tr.log_growth);
        series
            .log_growth_sup
            .push(tr.log_growth + next.sup_norm().ln() - tr.prev.segment.sup_norm().ln());
        series.psi_mean.push(interval_psi_mean(&tr.prev.segment, &tr.raw));
    }
    Ok(series)
}

/// The three estimates of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEstimates {
    pub direct_m2: EstimateReport,
    pub direct_sup: EstimateReport,
    pub furstenberg: EstimateReport,
}

impl TrajectoryEstimates {
    pub fn get(&self, method: Method) -> &EstimateReport {
        match method {
            Method::DirectM2 => &self.direct_m2,
            Method::DirectSup => &self.direct_sup,
            Method::Furstenberg => &self.furstenberg,
        }
    }

    pub fn reports(&self) -> [&EstimateReport; 3] {
        [&self.direct_m2, &self.direct_sup, &self.furstenberg]
    }
}

/// Runs one trajectory on stream `stream` of `seed` and evaluates all three
/// estimators on it.
pub fn run_all(
    eta: &Segment,
    label: &str,
    cfg: &EstimatorConfig,
    seed: u64,
    stream: u64,
) -> Result<TrajectoryEstimates> {
    let series = growth_series(eta, cfg, NoiseStream::new(seed, stream))?;
    let report = |data: &[f64], method| -> Result<EstimateReport> {
        let bm = batch_means_ci(data, cfg.batches)?;
        Ok(EstimateReport {
            estimate: bm.mean,
            standard_error: bm.standard_error,
            batch_count: bm.batches,
            horizon_t: cfg.horizon,
            burn_in: cfg.burn_in,
            resolution_n: eta.resolution(),
            method,
            seed,
            stream,
            initial_condition_label: label.to_string(),
        })
    };
    Ok(TrajectoryEstimates {
        direct_m2: report(&series.log_growth_m2, Method::DirectM2)?,
        direct_sup: report(&series.log_growth_sup, Method::DirectSup)?,
        furstenberg: report(&series.psi_mean, Method::Furstenberg)?,
    })
}

/// Growth rate of `log ‖X_t‖` or `log ‖X_t‖`.
pub fn run_direct(
    eta: &Segment,
    label: &str,
    cfg: &EstimatorConfig,
    seed: u64,
    stream: u64,
    norm: NormKind,
) -> Result<EstimateReport> {
    let all = run_all(eta, label, cfg, seed, stream)?;
    Ok(match norm {
        NormKind::M2 => all.direct_m2,
        NormKind::Sup => all.direct_sup,
    })
}

/// Ergodic-average estimate `(1/T) ∫ psi(S_t) dt`.
pub fn run_furstenberg(
    eta: &Segment,
    label: &str,
    cfg: &EstimatorConfig,
    seed: u64,
    stream: u64,
) -> Result<EstimateReport> {
    Ok(run_all(eta, label, cfg, seed, stream)?.furstenberg)
}

/// Average of independent replica estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedEstimate {
    pub estimate: f64,
    /// `sqrt(Σ SE_i²) / R`.
    pub standard_error: f64,
    pub replicas: usize,
    /// Sample standard deviation of the replica estimates.
    pub replica_sd: f64,
}

pub fn combine<'a>(reports: impl IntoIterator<Item = &'a EstimateReport>) -> Result<CombinedEstimate> {
    let (estimates, se): (Vec<f64>, Vec<f64>) = reports
        .into_iter()
        .map(|r| (r.estimate, r.standard_error))
        .unzip();
    if estimates.is_empty() {
        return Err(SimError::InsufficientData("no reports to combine".into()));
    }
    let r = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / r;
    let replica_sd = if estimates.len() > 1 {
        (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(CombinedEstimate {
        estimate: mean,
        standard_error: se.iter().map(|s| s * s).sum::<f64>().sqrt() / r,
        replicas: estimates.len(),
        replica_sd,
    })
}

/// Agreement check between two estimates: `|a - b| <= k · sqrt(SE_a² + SE_b²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub left: String,
    pub right: String,
    pub difference: f64,
    pub combined_se: f64,
    pub threshold: f64,
    pub agrees: bool,
}

impl Agreement {
    pub fn new(left: &str, a: &CombinedEstimate, right: &str, b: &CombinedEstimate, k: f64) -> Self {
        let difference = (a.estimate - b.estimate).abs();
        let combined_se = (a.standard_error.powi(2) + b.standard_error.powi(2)).sqrt();
        Self {
            left: left.to_string(),
            right: right.to_string(),
            difference,
            combined_se,
            threshold: k * combined_se,
            agrees: difference <= k * combined_se,
        }
    }
}

/// Runs `replicas` trajectories from `eta` on streams
/// `stream_id(group, 0..replicas)`, in parallel, ordered by replica index.
pub fn run_replicas(
    eta: &Segment,
    label: &str,
    cfg: &EstimatorConfig,
    replicas: u32,
    seed: u64,
    group: u32,
) -> Result<Vec<TrajectoryEstimates>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| run_all(eta, label, cfg, seed, stream_id(group, r)))
        .collect()
}

/// Initial condition with a display label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub label: String,
    pub segment: Segment,
}

/// Output of [`multi_eta_harness`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessResult {
    /// Replica estimates, grouped by initial condition in input order.
    pub runs: Vec<Vec<TrajectoryEstimates>>,
    /// Per initial condition, the combined `direct_m2` estimate.
    pub combined: Vec<(String, CombinedEstimate)>,
    /// Pairwise `direct_m2` comparisons at `3·combined SE`.
    pub comparisons: Vec<Agreement>,
}

impl HarnessResult {
    pub fn all_agree(&self) -> bool {
        self.comparisons.iter().all(|c| c.agrees)
    }
}

/// Estimates `Λ` from each initial condition over `replicas` independent
/// streams and compares every pair. Initial condition `i` uses stream group
/// `i`.
pub fn multi_eta_harness(
    etas: &[LabeledSegment],
    cfg: &EstimatorConfig,
    replicas: u32,
    seed: u64,
) -> Result<HarnessResult> {
    if etas.len() < 2 {
        return Err(SimError::param("etas", "need at least two initial conditions"));
    }
    if replicas == 0 {
        return Err(SimError::param("replicas", "must be positive"));
    }
    if let Some(z) = etas.iter().find(|e| e.segment.is_zero()) {
        return Err(SimError::InvalidInitialCondition {
            spec: z.label.clone(),
            reason: "zero initial condition".into(),
        });
    }
    let jobs: Vec<(usize, u32)> = (0..etas.len())
        .flat_map(|i| (0..replicas).map(move |r| (i, r)))
        .collect();
    let flat: Vec<TrajectoryEstimates> = jobs
        .par_iter()
        .map(|&(i, r)| run_all(&etas[i].segment, &etas[i].label, cfg, seed, stream_id(i as u32, r)))
        .collect::<Result<_>>()?;
    let runs: Vec<Vec<TrajectoryEstimates>> = flat
        .chunks(replicas as usize)
        .map(|c| c.to_vec())
        .collect();
    let combined = runs
        .iter()
        .zip(etas)
        .map(|(rs, e)| Ok((e.label.clone(), combine(rs.iter().map(|r| &r.direct_m2))?)))
        .collect::<Result<Vec<_>>>()?;
    let mut comparisons = Vec::new();
    for i in 0..combined.len() {
        for j in i + 1..combined.len() {
            comparisons.push(Agreement::new(&combined[i].0, &combined[i].1, &combined[j].0, &combined[j].1, 3.0));
        }
    }
    Ok(HarnessResult {
        runs,
        combined,
        comparisons,
    })
}
