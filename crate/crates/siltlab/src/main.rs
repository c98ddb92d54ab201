use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use siltlab::config::{ExperimentConfig, ExperimentKind};
use siltlab::{run_experiment, HarnessError, RunOptions};

fn kinds_help() -> String {
    let mut s = String::from("Experiment kinds:\n");
    for k in ExperimentKind::ALL {
        s.push_str(&format!("  {:<8} {}\n", k.name(), k.anchor()));
    }
    s.push_str("\nExit status: 0 when every assertion passes, 1 when one fails, 2 for a bad config, 3 for a runtime error.\n");
    s.push_str("SILTLAB_OUT, when set, overrides --out.");
    s
}

/// Validation studies for branching stable superprocesses and their
/// self-intersection local times.
#[derive(Debug, Parser)]
#[command(name = "siltlab", version, after_help = kinds_help())]
struct Cli {
    /// Which study to run.
    #[arg(value_enum)]
    kind: ExperimentKind,
    /// JSON config; desk-scale defaults for KIND when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, replacing the one in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory (SILTLAB_OUT takes precedence).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Save every simulated path as an SPR1 file in this directory.
    #[arg(long)]
    dump_paths: Option<PathBuf>,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            ExperimentConfig::parse(&text).map_err(|e| e.to_string())?
        }
        None => ExperimentConfig::default_for(cli.kind),
    };
    if cfg.kind != cli.kind {
        return Err(format!("invalid config field `kind`: config is for `{}` but `{}` was requested", cfg.kind.name(), cli.kind.name()));
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let env_out = std::env::var_os("SILTLAB_OUT").filter(|v| !v.is_empty()).map(PathBuf::from);
    let out_dir = env_out
        .or_else(|| cli.out.clone()).or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("siltlab-out").join(cfg.kind.name()));
    let opts = RunOptions { out_dir, workers: cli.workers, dump_paths: cli.dump_paths.clone() };
    match run_experiment(&cfg, &opts) {
        Ok(outcome) => {
            for a in &outcome.manifest.assertions {
                println!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
            }
            println!("outputs in {}", opts.out_dir.display());
            let failed = outcome.failed();
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                for a in failed {
                    eprintln!("assertion failed: {}", a.name);
                }
                ExitCode::from(1)
            }
        }
        Err(HarnessError::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
