//! Command line and config-file handling.
//!
//! Every tunable can come from a flag, from the JSON file given by
//! `--config`, or from the built-in default, in that order of precedence.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sdde_core::coupling::{CouplingConfig, DEFAULT_KAPPA, DEFAULT_LAMBDA, DEFAULT_LAMBDA_GRID};
use sdde_core::lyapunov::{EstimatorConfig, DEFAULT_BATCHES};
use sdde_core::measure::{self, SamplingConfig};
use sdde_core::moments::DEFAULT_PATHS;
use sdde_core::InitialCondition;

pub const DEFAULT_N: usize = 64;
pub const DEFAULT_T: u64 = 2000;
pub const DEFAULT_REPLICAS: u32 = 8;
pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_OUT: &str = "results";
/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SDDE_OUT_DIR";

/// A configuration problem: reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "sdde", version, about = "Experiments for the delay equation dX(t) = X(t-1) dW(t)")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo second moments of X(1), X(2) against the Itô-isometry values.
    Moments(RunArgs),
    /// Growth-rate estimates by all three estimators, per initial condition.
    Lyapunov(RunArgs),
    /// One coupled trajectory pair: trace, contraction, waiting times, cost.
    Couple(RunArgs),
    /// Coupling statistics across a (λ, κ) grid with common random numbers.
    Sweep(RunArgs),
    /// Sphere-process samples, tightness and cross-initial-condition distances.
    Measure(RunArgs),
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::Moments(_) => CommandKind::Moments,
            Command::Lyapunov(_) => CommandKind::Lyapunov,
            Command::Couple(_) => CommandKind::Couple,
            Command::Sweep(_) => CommandKind::Sweep,
            Command::Measure(_) => CommandKind::Measure,
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Moments(a)
            | Command::Lyapunov(a)
            | Command::Couple(a)
            | Command::Sweep(a)
            | Command::Measure(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Moments,
    Lyapunov,
    Couple,
    Sweep,
    Measure,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Moments => "moments",
            CommandKind::Lyapunov => "lyapunov",
            CommandKind::Couple => "couple",
            CommandKind::Sweep => "sweep",
            CommandKind::Measure => "measure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Initial condition: const:c, linear, cos:k, saw or file:path. Repeatable.
    #[arg(long, value_name = "DESC")]
    pub eta: Vec<InitialCondition>,
    /// Second initial condition of a coupled pair (default: eta·(1+eps)).
    #[arg(long, value_name = "DESC")]
    pub phi: Option<InitialCondition>,
    /// Perturbation direction: phi = eta + eps·perturb.
    #[arg(long, value_name = "DESC", conflicts_with = "phi")]
    pub perturb: Option<InitialCondition>,
    /// Size of the initial difference of a coupled pair.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Grid resolution (steps per unit delay).
    #[arg(long = "N", value_name = "N")]
    pub n: Option<usize>,
    /// Horizon in unit intervals.
    #[arg(long = "T", value_name = "T")]
    pub t: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<u64>,
    /// Snapshot spacing for measure sampling.
    #[arg(long)]
    pub thin: Option<u64>,
    /// Batches for batch-means standard errors.
    #[arg(long)]
    pub batches: Option<usize>,
    #[arg(long)]
    pub replicas: Option<u32>,
    /// Monte Carlo paths for moments.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Coupling strength(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    /// Head-dominance parameter(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub kappa: Option<Vec<f64>>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: $SDDE_OUT_DIR or ./results).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Table format.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// JSON config file; flags override its entries.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Exit with status 3 when an acceptance threshold is violated.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Contents of a `--config` file. Keys mirror the flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Lets a manifest's `config` object be replayed; must match the subcommand.
    command: Option<CommandKind>,
    eta: Option<OneOrMany<InitialCondition>>,
    phi: Option<InitialCondition>,
    perturb: Option<InitialCondition>,
    eps: Option<f64>,
    #[serde(rename = "N")]
    n: Option<usize>,
    #[serde(rename = "T")]
    t: Option<u64>,
    burn_in: Option<u64>,
    thin: Option<u64>,
    batches: Option<usize>,
    replicas: Option<u32>,
    paths: Option<usize>,
    #[serde(alias = "lambda_grid")]
    lambda: Option<OneOrMany<f64>>,
    kappa: Option<OneOrMany<f64>>,
    #[serde(alias = "master_seed")]
    seed: Option<u64>,
    out: Option<PathBuf>,
    format: Option<Format>,
    check: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("invalid config file {}: {e}", path.display())))
    }
}

/// Fully resolved experiment configuration, recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    pub eta: Vec<InitialCondition>,
    pub phi: Option<InitialCondition>,
    pub perturb: Option<InitialCondition>,
    pub eps: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub batches: usize,
    pub replicas: u32,
    pub paths: usize,
    pub lambda_grid: Vec<f64>,
    pub kappa: Vec<f64>,
    pub master_seed: u64,
    pub format: Format,
    pub check: bool,
    /// Not part of the manifest: outputs must not depend on where they land.
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Merges flags, the optional config file and defaults, then validates.
    pub fn resolve(command: CommandKind, args: &RunArgs) -> anyhow::Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Self::merge(command, args, file, std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
    }

    pub fn merge(command: CommandKind, args: &RunArgs, file: FileConfig, env_out: Option<PathBuf>) -> anyhow::Result<Self> {
        use CommandKind::*;
        if let Some(c) = file.command.filter(|&c| c != command) {
            return Err(usage(format!(
                "config file is for `{}`, not `{}`",
                c.as_str(),
                command.as_str()
            )));
        }
        let mut eta = if !args.eta.is_empty() {
            args.eta.clone()
        } else {
            file.eta.map(OneOrMany::into_vec).unwrap_or_default()
        };
        if eta.is_empty() {
            if command == Moments {
                eta.push(InitialCondition::Constant(1.0));
            } else {
                return Err(usage(format!("`{}` requires --eta", command.as_str())));
            }
        }
        let default_lambda = match command {
            Sweep => DEFAULT_LAMBDA_GRID.to_vec(),
            _ => vec![DEFAULT_LAMBDA],
        };
        let default_burn_in = match command {
            Measure => measure::DEFAULT_BURN_IN,
            _ => sdde_core::lyapunov::DEFAULT_BURN_IN,
        };
        let phi = args.phi.clone().or(file.phi);
        let perturb = args.perturb.clone().or(file.perturb);
        if phi.is_some() && perturb.is_some() {
            return Err(usage("phi and perturb are mutually exclusive"));
        }

        let cfg = ExperimentConfig {
            command,
            eta,
            phi,
            perturb,
            eps: args.eps.or(file.eps).unwrap_or(DEFAULT_EPS),
            n: args.n.or(file.n).unwrap_or(DEFAULT_N),
            t: args.t.or(file.t).unwrap_or(DEFAULT_T),
            burn_in: args.burn_in.or(file.burn_in).unwrap_or(default_burn_in),
            thin: args.thin.or(file.thin).unwrap_or(measure::DEFAULT_THIN),
            batches: args.batches.or(file.batches).unwrap_or(DEFAULT_BATCHES),
            replicas: args.replicas.or(file.replicas).unwrap_or(DEFAULT_REPLICAS),
            paths: args.paths.or(file.paths).unwrap_or(DEFAULT_PATHS),
            lambda_grid: args
                .lambda
                .clone()
                .or(file.lambda.map(OneOrMany::into_vec))
                .unwrap_or(default_lambda),
            kappa: args
                .kappa
                .clone()
                .or(file.kappa.map(OneOrMany::into_vec))
                .unwrap_or(vec![DEFAULT_KAPPA]),
            master_seed: args.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            format: args.format.or(file.format).unwrap_or_default(),
            check: args.check || file.check.unwrap_or(false),
            out_dir: args
                .out
                .clone()
                .or(file.out)
                .or(env_out)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        use CommandKind::*;
        let positive = [
            ("N", self.n as u64),
            ("T", self.t),
            ("thin", self.thin),
            ("batches", self.batches as u64),
            ("replicas", self.replicas as u64),
            ("paths", self.paths as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(usage(format!("{name} must be positive")));
            }
        }
        if self.n < 2 {
            return Err(usage("N must be at least 2"));
        }
        for eta in &self.eta {
            eta.to_nonzero_segment(self.n).map_err(|e| usage(e.to_string()))?;
        }
        if self.lambda_grid.is_empty() || self.kappa.is_empty() {
            return Err(usage("lambda and kappa need at least one value"));
        }
        if !(self.eps.is_finite() && self.eps != 0.0) {
            return Err(usage("eps must be finite and nonzero"));
        }
        match self.command {
            Moments => {
                if self.paths < 2 {
                    return Err(usage("paths must be at least 2"));
                }
            }
            Lyapunov => self.estimator().validate().map_err(|e| usage(e.to_string()))?,
            Measure => {
                let sampling = self.sampling();
                sampling.validate().map_err(|e| usage(e.to_string()))?;
                let snapshots = sampling.snapshot_times().count();
                if snapshots < measure::MIN_TIGHTNESS_SAMPLES {
                    return Err(usage(format!(
                        "T, burn_in and thin give {snapshots} snapshots; at least {} are needed",
                        measure::MIN_TIGHTNESS_SAMPLES
                    )));
                }
            }
            Couple | Sweep => {
                for &lambda in &self.lambda_grid {
                    for &kappa in &self.kappa {
                        self.coupling(lambda, kappa, 0)
                            .map_err(|e| usage(e.to_string()))?
                            .validate()
                            .map_err(|e| usage(e.to_string()))?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            horizon: self.t,
            burn_in: self.burn_in,
            batches: self.batches,
        }
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            horizon: self.t,
            burn_in: self.burn_in,
            thin: self.thin,
        }
    }

    /// The coupled pair built from the first `eta`.
    pub fn coupling(&self, lambda: f64, kappa: f64, stream: u64) -> sdde_core::Result<CouplingConfig> {
        use sdde_core::coupling::{phi_perturbed, phi_relative};
        let eta = self.eta[0].to_nonzero_segment(self.n)?;
        let phi = match (&self.phi, &self.perturb) {
            (Some(phi), _) => phi.to_segment(self.n)?,
            (None, Some(p)) => phi_perturbed(&eta, &p.to_segment(self.n)?, self.eps)?,
            (None, None) => phi_relative(&eta, self.eps)?,
        };
        Ok(CouplingConfig {
            lambda,
            kappa,
            horizon: self.t,
            seed: self.master_seed,
            stream,
            eta,
            phi,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(argv: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("sdde").chain(argv.iter().copied())).unwrap()
    }

    fn resolve(argv: &[&str], file: FileConfig) -> anyhow::Result<ExperimentConfig> {
        let cli = parse(argv);
        ExperimentConfig::merge(cli.command.kind(), cli.command.args(), file, None)
    }

    #[test]
    fn defaults_filled() {
        let cfg = resolve(&["lyapunov", "--eta", "const:1", "--T", "2000", "--seed", "7"], FileConfig::default()).unwrap();
        assert_eq!(cfg.n, 64);
        assert_eq!(cfg.t, 2000);
        assert_eq!(cfg.burn_in, 50);
        assert_eq!(cfg.batches, 20);
        assert_eq!(cfg.kappa, vec![0.05]);
        assert_eq!(cfg.replicas, 8);
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.out_dir, PathBuf::from("results"));
    }

    #[test]
    fn command_specific_defaults() {
        let m = resolve(&["measure", "--eta", "linear"], FileConfig::default()).unwrap();
        assert_eq!(m.burn_in, 200);
        let s = resolve(&["sweep", "--eta", "const:1", "--T", "500"], FileConfig::default()).unwrap();
        assert_eq!(s.lambda_grid, vec![4.0, 16.0, 64.0, 256.0]);
        let c = resolve(&["couple", "--eta", "const:1"], FileConfig::default()).unwrap();
        assert_eq!(c.lambda_grid, vec![64.0]);
        let mo = resolve(&["moments"], FileConfig::default()).unwrap();
        assert_eq!(mo.eta, vec![InitialCondition::Constant(1.0)]);
    }

    #[test]
    fn missing_eta_is_usage_error() {
        let err = resolve(&["lyapunov"], FileConfig::default()).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn file_then_flag_precedence() {
        let file: FileConfig = serde_json::from_str(r#"{"N": 128, "T": 300, "eta": ["linear", "saw"], "lambda": 16}"#).unwrap();
        let cfg = resolve(&["lyapunov", "--T", "400"], file.clone()).unwrap();
        assert_eq!(cfg.n, 128);
        assert_eq!(cfg.t, 400);
        assert_eq!(cfg.eta, vec![InitialCondition::Linear, InitialCondition::Sawtooth]);
        assert_eq!(cfg.lambda_grid, vec![16.0]);
        assert!(serde_json::from_str::<FileConfig>(r#"{"resolution": 3}"#).is_err());
    }

    #[test]
    fn env_out_dir_is_fallback() {
        let cli = parse(&["moments"]);
        let cfg = ExperimentConfig::merge(cli.command.kind(), cli.command.args(), FileConfig::default(), Some("/tmp/x".into())).unwrap();
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
        let cli = parse(&["moments", "--out", "here"]);
        let cfg = ExperimentConfig::merge(cli.command.kind(), cli.command.args(), FileConfig::default(), Some("/tmp/x".into())).unwrap();
        assert_eq!(cfg.out_dir, PathBuf::from("here"));
    }

    #[test]
    fn invalid_values_rejected() {
        for argv in [
            &["lyapunov", "--eta", "const:0"][..],
            &["lyapunov", "--eta", "const:1", "--N", "0"],
            &["lyapunov", "--eta", "const:1", "--T", "50"],
            &["measure", "--eta", "const:1", "--T", "100"],
            &["couple", "--eta", "const:1", "--kappa", "2"],
            &["couple", "--eta", "const:1", "--phi", "const:1"],
            &["moments", "--paths", "1"],
        ] {
            let err = resolve(argv, FileConfig::default()).unwrap_err();
            assert!(err.downcast_ref::<UsageError>().is_some(), "{argv:?}: {err}");
        }
        assert!(Cli::try_parse_from(["sdde", "lyapunov", "--eta", "spline"]).is_err());
        assert!(Cli::try_parse_from(["sdde", "bogus"]).is_err());
        assert!(Cli::try_parse_from(["sdde", "couple", "--eta", "linear", "--phi", "saw", "--perturb", "saw"]).is_err());
    }

    #[test]
    fn manifest_form_omits_out_dir() {
        let cfg = resolve(&["sweep", "--eta", "const:1", "--out", "/somewhere"], FileConfig::default()).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(!json.contains("somewhere"));
        assert!(json.contains("\"N\":64"));
    }

    #[test]
    fn manifest_config_replays() {
        let cfg = resolve(&["sweep", "--eta", "cos:2", "--N", "32", "--seed", "4", "--check"], FileConfig::default()).unwrap();
        let file: FileConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(resolve(&["sweep"], file).unwrap(), cfg);
        let file: FileConfig = serde_json::from_str(r#"{"command": "measure"}"#).unwrap();
        assert!(resolve(&["sweep", "--eta", "saw"], file).unwrap_err().downcast_ref::<UsageError>().is_some());
    }
}
