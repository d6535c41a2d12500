use anyhow::Result;
use serde::Serialize;

use sdde_core::lyapunov::LabeledSegment;
use sdde_core::measure::{
    endpoint_energy_distance, g_squared_means, lambda_from_measure, marginal_ranges, marginal_test,
    sample_many, thinning_report, tightness_report, MarginalRange, MarginalTest, MeasureLambda, Provenance,
    ThinningReport, TightnessReport, DEFAULT_DELTAS,
};

use super::{write_summary, Check};
use crate::config::ExperimentConfig;
use crate::output::{write_manifest, OutputDir, SeedRecord};

const EPSILONS: [f64; 3] = [0.25, 0.5, 1.0];
const CHECK_EPSILON: f64 = 0.5;
const ALPHA: f64 = 0.01;
const MAX_LAG: usize = 20;

#[derive(Serialize)]
struct SetReport {
    label: String,
    samples_file: String,
    samples: usize,
    max_norm_error: f64,
    lambda: MeasureLambda,
    ranges: Vec<MarginalRange>,
    tightness: TightnessReport,
    thinning: ThinningReport,
    g_squared_means: Vec<(usize, f64)>,
}

#[derive(Serialize)]
struct PairReport {
    left: String,
    right: String,
    marginal_tests: Vec<MarginalTest>,
    endpoint_energy_distance: f64,
}

#[derive(Serialize)]
struct Body<'a> {
    sets: &'a [SetReport],
    pairs: &'a [PairReport],
}

#[derive(Serialize)]
struct Sidecar<'a> {
    schema_version: u32,
    provenance: &'a Provenance,
    coords: &'a [f64],
}

pub(super) fn run(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let etas = cfg
        .eta
        .iter()
        .map(|e| {
            Ok(LabeledSegment {
                label: e.to_string(),
                segment: e.to_nonzero_segment(cfg.n)?,
            })
        })
        .collect::<sdde_core::Result<Vec<_>>>()?;
    let sets = sample_many(&etas, &cfg.sampling(), cfg.master_seed)?;

    let mut checks = Vec::new();
    let mut reports = Vec::new();
    for (i, set) in sets.iter().enumerate() {
        let label = set.provenance.eta_label.clone();
        let tightness = tightness_report(set, &DEFAULT_DELTAS, &EPSILONS)?;
        let column: Vec<f64> = tightness.column(CHECK_EPSILON).iter().map(|&(_, f)| f).collect();
        checks.push(Check::new(
            format!("{label}:unit_norm"),
            set.unit_norm_holds(),
            format!("max |‖S‖ - 1| = {:.2e}", set.max_norm_error()),
        ));
        checks.push(Check::new(
            format!("{label}:tightness_decreasing"),
            column.windows(2).all(|w| w[1] < w[0]),
            format!("P(modulus ≥ {CHECK_EPSILON}) over δ = {DEFAULT_DELTAS:?}: {column:.4?}"),
        ));
        let lambda = lambda_from_measure(set)?;
        println!(
            "{label:>12}: {} snapshots, Λ from μ̂ {:+.4} ± {:.4}, tightness {column:.3?}",
            set.len(),
            lambda.estimate,
            lambda.standard_error
        );

        let samples_file = format!("measure_samples_{i}.csv");
        let mut bytes = Vec::new();
        set.write_csv(&mut bytes)?;
        out.write_atomic(&samples_file, &bytes)?;
        out.write_json(
            &format!("measure_samples_{i}.json"),
            &Sidecar {
                schema_version: crate::output::SCHEMA_VERSION,
                provenance: &set.provenance,
                coords: &set.coords,
            },
        )?;
        let n = set.len();
        reports.push(SetReport {
            label,
            samples_file,
            samples: n,
            max_norm_error: set.max_norm_error(),
            lambda,
            ranges: marginal_ranges(set),
            tightness,
            thinning: thinning_report(set, 0.0, MAX_LAG),
            g_squared_means: g_squared_means(set, &[n / 4, n / 2, n]),
        });
    }

    let mut pairs = Vec::new();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            let (a, b) = (&sets[i], &sets[j]);
            let tests = a
                .coords
                .iter()
                .map(|&c| marginal_test(a, b, c, ALPHA))
                .collect::<sdde_core::Result<Vec<_>>>()?;
            if let Some(t) = tests.iter().find(|t| t.coord == 0.0) {
                checks.push(Check::new(
                    format!("ks_head:{}~{}", a.provenance.eta_label, b.provenance.eta_label),
                    t.passes,
                    format!("KS {:.4} vs critical {:.4} (ESS {:.0}, {:.0})", t.statistic, t.critical, t.ess_a, t.ess_b),
                ));
                println!(
                    "KS at s=0 {} vs {}: {:.4} (1% critical {:.4})",
                    a.provenance.eta_label, b.provenance.eta_label, t.statistic, t.critical
                );
            }
            pairs.push(PairReport {
                left: a.provenance.eta_label.clone(),
                right: b.provenance.eta_label.clone(),
                marginal_tests: tests,
                endpoint_energy_distance: endpoint_energy_distance(a, b)?,
            });
        }
    }

    write_summary(
        out,
        cfg,
        Body {
            sets: &reports,
            pairs: &pairs,
        },
        &checks,
    )?;
    let seeds: Vec<SeedRecord> = sets
        .iter()
        .map(|s| SeedRecord {
            label: s.provenance.eta_label.clone(),
            replica: 0,
            seed: s.provenance.seed,
            stream: s.provenance.stream,
        })
        .collect();
    write_manifest(out, cfg, &seeds)?;
    Ok(checks)
}
