//! Result files.
//!
//! Everything lands directly in the output directory. Each file is written
//! to a temporary sibling and renamed into place, so an interrupted run never
//! leaves a truncated final file behind.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::config::{ExperimentConfig, Format};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// File names written so far, in order.
    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn write_atomic(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            bail!("refusing to write `{name}` outside the output directory");
        }
        let target = self.root.join(name);
        let mut tmp = NamedTempFile::new_in(&self.root)
            .with_context(|| format!("cannot create a file in {}", self.root.display()))?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target)
            .with_context(|| format!("cannot write {}", target.display()))?;
        self.written.push(name.to_string());
        Ok(target)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_atomic(name, &bytes)
    }

    /// Writes `rows` as `<stem>.csv` or `<stem>.json`.
    pub fn write_table<R: Serialize>(&mut self, stem: &str, rows: &[R], format: Format) -> Result<PathBuf> {
        match format {
            Format::Csv => {
                let bytes = csv_bytes(rows)?;
                self.write_atomic(&format!("{stem}.csv"), &bytes)
            }
            Format::Json => self.write_json(&format!("{stem}.json"), rows),
        }
    }
}

pub fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))
}

/// Noise stream used by one replica.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRecord {
    pub label: String,
    pub replica: u32,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub config: &'a ExperimentConfig,
    pub seeds: &'a [SeedRecord],
    pub files: &'a [String],
}

/// Writes `<command>_manifest.json` listing everything written before it.
pub fn write_manifest(out: &mut OutputDir, cfg: &ExperimentConfig, seeds: &[SeedRecord]) -> Result<PathBuf> {
    let files = out.written().to_vec();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        seeds,
        files: &files,
    };
    out.write_json(&format!("{}_manifest.json", cfg.command.as_str()), &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        a: u32,
        b: f64,
        flag: bool,
    }

    #[test]
    fn writes_csv_and_json_tables() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(&dir.path().join("nested")).unwrap();
        let rows = [Row { a: 1, b: 0.5, flag: true }, Row { a: 2, b: -1e-3, flag: false }];
        let p = out.write_table("t", &rows, Format::Csv).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "a,b,flag\n1,0.5,true\n2,-0.001,false\n");
        let p = out.write_table("t", &rows, Format::Json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(v[1]["a"], 2);
        assert_eq!(out.written(), ["t.csv", "t.json"]);
        // Only the two final files remain.
        assert_eq!(std::fs::read_dir(out.root()).unwrap().count(), 2);
    }

    #[test]
    fn rejects_paths_outside_root() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        for bad in ["../x", "a/b", "", ".hidden"] {
            assert!(out.write_atomic(bad, b"x").is_err(), "{bad}");
        }
    }
}
