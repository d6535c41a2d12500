use anyhow::Result;
use serde::Serialize;

use sdde_core::coupling::{
    contraction_stats, girsanov_cost, r_of_lambda, ratio_bound_on_a, replicated_sweep, run_coupling,
    waiting_time_stats, CellSummary, ContractionStats, GirsanovCost, WaitingTimes, RATIO_BOUND_OFF_A,
    RATIO_TOLERANCE,
};
use sdde_core::stream_id;

use super::{write_summary, Check};
use crate::config::ExperimentConfig;
use crate::output::{write_manifest, OutputDir, SeedRecord};

const COST_TAIL_LIMIT: f64 = 0.01;
const CLAMP_LIMIT: f64 = 1e-3;
/// Slopes must be negative from this coupling strength on.
const NEGATIVE_SLOPE_FROM: f64 = 64.0;

#[derive(Serialize)]
struct TraceRow {
    n: u64,
    z_norm_m2: f64,
    log_z_norm: f64,
    log_x_norm: f64,
    y_in_b: bool,
    z_in_r: bool,
    a_event: bool,
    rho: u8,
    girsanov_increment: f64,
    clamp_flag: bool,
    clamp_count: u32,
}

#[derive(Serialize)]
struct CoupleBody<'a> {
    lambda: f64,
    kappa: f64,
    r_lambda: Option<f64>,
    a_fraction: f64,
    contraction: Option<ContractionStats>,
    waiting: Option<&'a WaitingTimes>,
    cost: GirsanovCost,
    notes: Vec<String>,
}

fn cost_checks(checks: &mut Vec<Check>, prefix: &str, tail_fraction: f64, clamp_fraction: f64) {
    checks.push(Check::new(
        format!("{prefix}cost_tail"),
        tail_fraction <= COST_TAIL_LIMIT,
        format!("last 20% carries {:.3e} of the total", tail_fraction),
    ));
    checks.push(Check::new(
        format!("{prefix}clamp_rare"),
        clamp_fraction < CLAMP_LIMIT,
        format!("clamped at {:.3e} of ρ=1 steps", clamp_fraction),
    ));
}

pub(super) fn run_couple(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let (lambda, kappa) = (cfg.lambda_grid[0], cfg.kappa[0]);
    let config = cfg.coupling(lambda, kappa, stream_id(0, 0))?;
    let trace = run_coupling(&config)?;
    let cost = girsanov_cost(&trace);
    let mut notes = Vec::new();
    let contraction = contraction_stats(&trace).map_err(|e| notes.push(e.to_string())).ok();
    let waiting = waiting_time_stats(&trace).map_err(|e| notes.push(e.to_string())).ok();

    let rows: Vec<TraceRow> = trace
        .records
        .iter()
        .map(|r| TraceRow {
            n: r.n,
            z_norm_m2: r.z_norm_m2(),
            log_z_norm: r.log_z_norm,
            log_x_norm: r.log_x_norm,
            y_in_b: r.y_in_b,
            z_in_r: r.z_in_r,
            a_event: r.a_event,
            rho: r.rho as u8,
            girsanov_increment: r.girsanov_increment,
            clamp_flag: r.clamp_flag(),
            clamp_count: r.clamp_count,
        })
        .collect();

    let mut checks = vec![Check::new(
        "rho_rule",
        trace.records.iter().all(|r| r.rho == (r.y_in_b && r.z_in_r) && r.a_event == r.rho),
        "rho = 1 exactly on A_n",
    )];
    if let Some(c) = &contraction {
        if let (Some(ratio), Ok(bound)) = (c.conditional_ratio_on_a, ratio_bound_on_a(lambda, kappa)) {
            checks.push(Check::new(
                "ratio_on_a",
                ratio <= bound * (1.0 + RATIO_TOLERANCE),
                format!("{ratio:.4} vs 2√r(λ)·1.25 = {:.4}", bound * (1.0 + RATIO_TOLERANCE)),
            ));
        }
        if let Some(ratio) = c.conditional_ratio_off_a {
            checks.push(Check::new(
                "ratio_off_a",
                ratio <= RATIO_BOUND_OFF_A * (1.0 + RATIO_TOLERANCE),
                format!("{ratio:.4} vs 2√2·1.25 = {:.4}", RATIO_BOUND_OFF_A * (1.0 + RATIO_TOLERANCE)),
            ));
        }
        println!(
            "λ = {lambda}, κ = {kappa}: slope {:+.4} ± {:.4}, A_n in {:.1}% of intervals",
            c.slope,
            c.slope_se,
            100.0 * c.a_fraction
        );
    }
    cost_checks(&mut checks, "", cost.tail_fraction, cost.clamp_fraction);
    println!("Girsanov cost {:.4e} (tail share {:.2e})", cost.total, cost.tail_fraction);
    for n in &notes {
        log::warn!("{n}");
    }

    out.write_table("couple_trace", &rows, cfg.format)?;
    let body = CoupleBody {
        lambda,
        kappa,
        r_lambda: r_of_lambda(lambda, kappa).ok(),
        a_fraction: trace.a_fraction(),
        contraction,
        waiting: waiting.as_ref(),
        cost,
        notes,
    };
    write_summary(out, cfg, body, &checks)?;
    let seeds = [SeedRecord {
        label: cfg.eta[0].to_string(),
        replica: 0,
        seed: cfg.master_seed,
        stream: config.stream,
    }];
    write_manifest(out, cfg, &seeds)?;
    Ok(checks)
}

#[derive(Serialize)]
struct SweepRow {
    kappa: f64,
    lambda: f64,
    r_lambda: Option<f64>,
    replicas: usize,
    slope_mean: f64,
    slope_se: f64,
    ratio_on_a: Option<f64>,
    ratio_off_a: Option<f64>,
    a_fraction: f64,
    waiting_rate: Option<f64>,
    rate_ci_lo: Option<f64>,
    rate_ci_hi: Option<f64>,
    cost_total_mean: f64,
    cost_tail_fraction_max: f64,
    clamp_fraction: f64,
}

impl From<&CellSummary> for SweepRow {
    fn from(c: &CellSummary) -> Self {
        Self {
            kappa: c.kappa,
            lambda: c.lambda,
            r_lambda: c.r_lambda,
            replicas: c.replicas,
            slope_mean: c.slope_mean,
            slope_se: c.slope_se,
            ratio_on_a: c.ratio_on_a,
            ratio_off_a: c.ratio_off_a,
            a_fraction: c.a_fraction,
            waiting_rate: c.waiting.as_ref().map(|w| w.rate),
            rate_ci_lo: c.waiting.as_ref().map(|w| w.rate_ci.0),
            rate_ci_hi: c.waiting.as_ref().map(|w| w.rate_ci.1),
            cost_total_mean: c.cost_total_mean,
            cost_tail_fraction_max: c.cost_tail_fraction_max,
            clamp_fraction: c.clamp_fraction(),
        }
    }
}

#[derive(Serialize)]
struct MonotoneFlag {
    kappa: f64,
    slopes_strictly_decreasing: bool,
}

#[derive(Serialize)]
struct SweepBody<'a> {
    rows: &'a [SweepRow],
    monotone: &'a [MonotoneFlag],
}

/// Checks on one κ row of the sweep, with `cells` sorted by increasing λ.
fn sweep_checks(kappa: f64, cells: &[&CellSummary], checks: &mut Vec<Check>) -> bool {
    let slopes: Vec<f64> = cells.iter().map(|c| c.slope_mean).collect();
    let monotone = slopes.windows(2).all(|w| w[1] < w[0]);
    checks.push(Check::new(
        format!("kappa={kappa}:slope_decreasing"),
        monotone,
        format!("{slopes:.4?}"),
    ));
    let negative: Vec<&&CellSummary> = cells.iter().filter(|c| c.lambda >= NEGATIVE_SLOPE_FROM).collect();
    checks.push(Check::new(
        format!("kappa={kappa}:slope_negative"),
        negative.iter().all(|c| c.slope_mean < 0.0),
        format!("λ ≥ {NEGATIVE_SLOPE_FROM}"),
    ));
    for c in cells {
        let p = format!("kappa={kappa},lambda={}:", c.lambda);
        checks.push(Check::new(format!("{p}ratio_on_a"), c.on_a_bound_holds(RATIO_TOLERANCE), format!("{:?}", c.ratio_on_a)));
        checks.push(Check::new(format!("{p}ratio_off_a"), c.off_a_bound_holds(RATIO_TOLERANCE), format!("{:?}", c.ratio_off_a)));
        if c.lambda > 0.0 {
            cost_checks(checks, &p, c.cost_tail_fraction_max, c.clamp_fraction());
        }
    }
    let rated: Vec<(f64, &WaitingTimes)> = cells
        .iter()
        .filter_map(|c| c.waiting.as_ref().map(|w| (c.lambda, w)))
        .collect();
    for (i, (la, wa)) in rated.iter().enumerate() {
        for (lb, wb) in &rated[i + 1..] {
            checks.push(Check::new(
                format!("kappa={kappa}:rate_overlap_{la}_{lb}"),
                wa.rate_ci_overlaps(wb),
                format!("[{:.4}, {:.4}] vs [{:.4}, {:.4}]", wa.rate_ci.0, wa.rate_ci.1, wb.rate_ci.0, wb.rate_ci.1),
            ));
        }
    }
    monotone
}

pub(super) fn run_sweep(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let base = cfg.coupling(cfg.lambda_grid[0], cfg.kappa[0], 0)?;
    let cells = replicated_sweep(&base, &cfg.lambda_grid, &cfg.kappa, cfg.replicas)?;
    let rows: Vec<SweepRow> = cells.iter().map(SweepRow::from).collect();
    for r in &rows {
        println!(
            "κ = {:<6} λ = {:<6} slope {:+.4} ± {:.4}  ratio on A {:?}  A-rate {:?}",
            r.kappa, r.lambda, r.slope_mean, r.slope_se, r.ratio_on_a, r.waiting_rate
        );
    }

    let mut checks = Vec::new();
    let mut monotone = Vec::new();
    for &kappa in &cfg.kappa {
        let mut row: Vec<&CellSummary> = cells.iter().filter(|c| c.kappa == kappa).collect();
        row.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        let flag = sweep_checks(kappa, &row, &mut checks);
        monotone.push(MonotoneFlag {
            kappa,
            slopes_strictly_decreasing: flag,
        });
    }

    out.write_table("sweep", &rows, cfg.format)?;
    write_summary(
        out,
        cfg,
        SweepBody {
            rows: &rows,
            monotone: &monotone,
        },
        &checks,
    )?;
    let seeds: Vec<SeedRecord> = (0..cfg.replicas)
        .map(|r| SeedRecord {
            label: cfg.eta[0].to_string(),
            replica: r,
            seed: cfg.master_seed,
            stream: stream_id(0, r),
        })
        .collect();
    write_manifest(out, cfg, &seeds)?;
    Ok(checks)
}
