//! One module per experiment family. Each runner computes everything first,
//! then writes its tables, a `<command>_summary.json` and finally the
//! manifest.

mod coupling;
mod lyapunov;
mod measure;
mod moments;

use anyhow::Result;
use serde::Serialize;

use crate::config::{CommandKind, ExperimentConfig};
use crate::output::OutputDir;

/// One acceptance threshold evaluated on the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub files: Vec<String>,
}

impl Outcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = OutputDir::create(&cfg.out_dir)?;
    let checks = match cfg.command {
        CommandKind::Moments => moments::run(cfg, &mut out)?,
        CommandKind::Lyapunov => lyapunov::run(cfg, &mut out)?,
        CommandKind::Couple => coupling::run_couple(cfg, &mut out)?,
        CommandKind::Sweep => coupling::run_sweep(cfg, &mut out)?,
        CommandKind::Measure => measure::run(cfg, &mut out)?,
    };
    Ok(Outcome {
        checks,
        files: out.written().to_vec(),
    })
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    schema_version: u32,
    command: &'static str,
    #[serde(flatten)]
    body: T,
    checks: &'a [Check],
}

fn write_summary<T: Serialize>(out: &mut OutputDir, cfg: &ExperimentConfig, body: T, checks: &[Check]) -> Result<()> {
    let summary = Summary {
        schema_version: crate::output::SCHEMA_VERSION,
        command: cfg.command.as_str(),
        body,
        checks,
    };
    out.write_json(&format!("{}_summary.json", cfg.command.as_str()), &summary)?;
    Ok(())
}
