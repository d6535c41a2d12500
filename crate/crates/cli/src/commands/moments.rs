use anyhow::Result;
use serde::Serialize;

use sdde_core::moments::{refinement_bias, run_moments, BiasRow, MomentConfig, MomentReport, RefinementReport};

use super::{write_summary, Check};
use crate::config::ExperimentConfig;
use crate::output::{write_manifest, OutputDir, SeedRecord};

/// Reference grid of the weak-error study, as a multiple of `N`.
const REFERENCE_FACTOR: usize = 8;
const SIGMA: f64 = 3.0;

#[derive(Serialize)]
struct MomentRow {
    time: u32,
    mean: f64,
    standard_error: f64,
    oracle: f64,
    z_score: f64,
    scheme_expectation: f64,
}

#[derive(Serialize)]
struct Body<'a> {
    report: &'a MomentReport,
    refinement: &'a RefinementReport,
    stream_rule: &'static str,
}

pub(super) fn run(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let eta = cfg.eta[0].clone();
    let report = run_moments(&MomentConfig {
        eta: eta.clone(),
        resolution: cfg.n,
        paths: cfg.paths,
        seed: cfg.master_seed,
    })?;
    let refinement = refinement_bias(
        &eta,
        &[cfg.n, 2 * cfg.n],
        REFERENCE_FACTOR * cfg.n,
        cfg.paths,
        cfg.master_seed,
    )?;

    let scheme = [report.scheme.0, report.scheme.1];
    let rows: Vec<MomentRow> = report
        .estimates
        .iter()
        .zip(scheme)
        .map(|(e, s)| MomentRow {
            time: e.time,
            mean: e.mean,
            standard_error: e.standard_error,
            oracle: e.oracle,
            z_score: e.z_score(),
            scheme_expectation: s,
        })
        .collect();
    for r in &rows {
        println!(
            "E X({})^2 = {:.5} ± {:.5}  (oracle {}, z = {:+.2})",
            r.time, r.mean, r.standard_error, r.oracle, r.z_score
        );
    }
    for r in &refinement.rows {
        println!(
            "N = {:4}: bias of E X(2)^2 vs N = {} reference {:+.5} ± {:.5}",
            r.resolution, refinement.reference_resolution, r.bias, r.standard_error
        );
    }

    let mut checks: Vec<Check> = report
        .estimates
        .iter()
        .map(|e| {
            Check::new(
                format!("second_moment_t{}", e.time),
                e.within(SIGMA),
                format!("|{:.5} - {}| vs {SIGMA}·SE = {:.5}", e.mean, e.oracle, SIGMA * e.standard_error),
            )
        })
        .collect();
    checks.push(Check::new(
        "bias_decreases_with_h",
        refinement.bias_decreasing(),
        refinement
            .rows
            .iter()
            .map(|r| format!("N={}: {:+.5}", r.resolution, r.bias))
            .collect::<Vec<_>>()
            .join(", "),
    ));

    out.write_table("moments", &rows, cfg.format)?;
    out.write_table::<BiasRow>("moments_refinement", &refinement.rows, cfg.format)?;
    let body = Body {
        report: &report,
        refinement: &refinement,
        stream_rule: "path p uses stream (0 << 32) | p",
    };
    write_summary(out, cfg, body, &checks)?;
    let seeds = [SeedRecord {
        label: eta.to_string(),
        replica: 0,
        seed: cfg.master_seed,
        stream: 0,
    }];
    write_manifest(out, cfg, &seeds)?;
    Ok(checks)
}
