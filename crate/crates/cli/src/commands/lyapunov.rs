use anyhow::Result;
use serde::Serialize;

use sdde_core::lyapunov::{combine, run_replicas, Agreement, CombinedEstimate, Method, TrajectoryEstimates};

use super::{write_summary, Check};
use crate::config::ExperimentConfig;
use crate::output::{write_manifest, OutputDir, SeedRecord};

const SIGMA: f64 = 3.0;

#[derive(Serialize)]
struct EstimateRow {
    eta: String,
    replica: u32,
    seed: u64,
    stream: u64,
    method: Method,
    estimate: f64,
    standard_error: f64,
    batches: usize,
    #[serde(rename = "T")]
    t: u64,
    burn_in: u64,
    #[serde(rename = "N")]
    n: usize,
}

#[derive(Serialize)]
struct CombinedRow {
    eta: String,
    method: Method,
    estimate: f64,
    standard_error: f64,
    replicas: usize,
    replica_sd: f64,
}

#[derive(Serialize)]
struct Body<'a> {
    combined: &'a [CombinedRow],
    agreements: &'a [Agreement],
    upper_bound_violations: usize,
}

pub(super) fn run(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let ecfg = cfg.estimator();
    let mut runs: Vec<(String, Vec<TrajectoryEstimates>)> = Vec::new();
    for (i, eta) in cfg.eta.iter().enumerate() {
        let label = eta.to_string();
        let seg = eta.to_nonzero_segment(cfg.n)?;
        let reps = run_replicas(&seg, &label, &ecfg, cfg.replicas, cfg.master_seed, i as u32)?;
        runs.push((label, reps));
    }

    let mut rows = Vec::new();
    let mut seeds = Vec::new();
    for (label, reps) in &runs {
        for (r, est) in reps.iter().enumerate() {
            let first = &est.direct_m2;
            seeds.push(SeedRecord {
                label: label.clone(),
                replica: r as u32,
                seed: first.seed,
                stream: first.stream,
            });
            for rep in est.reports() {
                rows.push(EstimateRow {
                    eta: label.clone(),
                    replica: r as u32,
                    seed: rep.seed,
                    stream: rep.stream,
                    method: rep.method,
                    estimate: rep.estimate,
                    standard_error: rep.standard_error,
                    batches: rep.batch_count,
                    t: rep.horizon_t,
                    burn_in: rep.burn_in,
                    n: rep.resolution_n,
                });
            }
        }
    }

    let mut combined_rows = Vec::new();
    let mut per_eta: Vec<(String, Vec<CombinedEstimate>)> = Vec::new();
    for (label, reps) in &runs {
        let c = Method::ALL
            .iter()
            .map(|&m| combine(reps.iter().map(|r| r.get(m))))
            .collect::<sdde_core::Result<Vec<_>>>()?;
        for (m, est) in Method::ALL.iter().zip(&c) {
            combined_rows.push(CombinedRow {
                eta: label.clone(),
                method: *m,
                estimate: est.estimate,
                standard_error: est.standard_error,
                replicas: est.replicas,
                replica_sd: est.replica_sd,
            });
            println!(
                "{label:>12} {:<12} Λ̂ = {:+.5} ± {:.5}",
                m.as_str(),
                est.estimate,
                est.standard_error
            );
        }
        per_eta.push((label.clone(), c));
    }

    let mut agreements = Vec::new();
    for (label, c) in &per_eta {
        let name = |m: Method| format!("{label}/{}", m.as_str());
        agreements.push(Agreement::new(&name(Method::DirectM2), &c[0], &name(Method::Furstenberg), &c[2], SIGMA));
        agreements.push(Agreement::new(&name(Method::DirectM2), &c[0], &name(Method::DirectSup), &c[1], SIGMA));
    }
    for i in 0..per_eta.len() {
        for j in i + 1..per_eta.len() {
            let (a, b) = (&per_eta[i], &per_eta[j]);
            agreements.push(Agreement::new(&a.0, &a.1[0], &b.0, &b.1[0], SIGMA));
        }
    }
    let violations = runs
        .iter()
        .flat_map(|(_, reps)| reps.iter().flat_map(|r| r.reports()))
        .filter(|r| r.exceeds_upper_bound(SIGMA))
        .count();

    let mut checks: Vec<Check> = agreements
        .iter()
        .map(|a| {
            Check::new(
                format!("agree:{}~{}", a.left, a.right),
                a.agrees,
                format!("|Δ| = {:.5}, {SIGMA}·SE = {:.5}", a.difference, a.threshold),
            )
        })
        .collect();
    checks.push(Check::new(
        "upper_bound_half",
        violations == 0,
        format!("{violations} estimates with Λ̂ - {SIGMA}·SE > 1/2"),
    ));

    out.write_table("lyapunov_estimates", &rows, cfg.format)?;
    out.write_table("lyapunov_combined", &combined_rows, cfg.format)?;
    let body = Body {
        combined: &combined_rows,
        agreements: &agreements,
        upper_bound_violations: violations,
    };
    write_summary(out, cfg, body, &checks)?;
    write_manifest(out, cfg, &seeds)?;
    Ok(checks)
}
