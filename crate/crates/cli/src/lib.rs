//! Batch experiment runner behind the `sdde` binary.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{run, Check, Outcome};
pub use config::{Cli, Command, CommandKind, ExperimentConfig, Format, UsageError};

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const RUNTIME: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CHECK_FAILED: i32 = 3;
}

/// Resolves the configuration, runs the experiment and maps the result to
/// an exit status.
pub fn execute(cli: &Cli) -> i32 {
    let cfg = match ExperimentConfig::resolve(cli.command.kind(), cli.command.args()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return if e.downcast_ref::<UsageError>().is_some() {
                exit::USAGE
            } else {
                exit::RUNTIME
            };
        }
    };
    match run(&cfg) {
        Ok(outcome) => {
            for c in &outcome.checks {
                if cfg.check || !c.passed {
                    println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                }
            }
            println!("wrote {} files to {}", outcome.files.len(), cfg.out_dir.display());
            if cfg.check && !outcome.all_passed() {
                exit::CHECK_FAILED
            } else {
                exit::OK
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit::RUNTIME
        }
    }
}
