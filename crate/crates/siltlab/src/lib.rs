//! Experiment harness: configuration, seeded runs, CSV tables and a run
//! manifest for each validation study of `siltlab-core`.

pub mod config;
pub mod convergence;
pub mod estimates;
pub mod manifest;
pub mod suites;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::time::Instant;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};
pub use convergence::{emit_convergence_table, ConvergenceError, ConvergenceTable};
pub use estimates::{Assertion, EstimateRow, EstimateTable};
pub use manifest::{RunManifest, RunStatus};
pub use suites::SuiteOutput;

use manifest::sha256_hex;
use suites::{Context, ESTIMATES_FILE};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] siltlab_core::Error),
    #[error(transparent)]
    Convergence(#[from] ConvergenceError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Where and how to run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    /// Directory for SPR1 dumps of every simulated path.
    pub dump_paths: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub output: SuiteOutput,
}

impl RunOutcome {
    pub fn failed(&self) -> Vec<&Assertion> {
        self.manifest.assertions.iter().filter(|a| !a.passed).collect()
    }

    pub fn passed(&self) -> bool {
        self.failed().is_empty()
    }
}

fn write_dumps(dir: &Path, rx: std::sync::mpsc::Receiver<(u64, Vec<u8>)>) -> std::io::Result<BTreeMap<String, String>> {
    let mut digests = BTreeMap::new();
    for (index, bytes) in rx {
        let path = dir.join(format!("path_{index:06}.spr1"));
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        f.write_all(&bytes)?;
        f.flush()?;
        digests.insert(path.display().to_string(), sha256_hex(&bytes));
    }
    Ok(digests)
}

/// Validates `cfg`, runs its suite and writes the tables and manifest into
/// `opts.out_dir`. Failing assertions are reported in the outcome, not as
/// an error.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.workers).build().map_err(|e| HarnessError::Pool(e.to_string()))?;
    let mut manifest = RunManifest::start(cfg, pool.current_num_threads());
    manifest.write(&opts.out_dir)?;
    let started = Instant::now();

    let dump_dir = opts.dump_paths.as_ref().filter(|_| cfg.kind.holds_paths());
    let (ctx, writer) = match dump_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let (tx, rx) = sync_channel(4);
            let dir = dir.clone();
            (Context { dump: Some(tx) }, Some(std::thread::spawn(move || write_dumps(&dir, rx))))
        }
        None => (Context::default(), None),
    };
    let result = pool.install(|| suites::run_suite(cfg, &ctx));
    drop(ctx);
    let dumped = writer.map(|w| w.join().expect("path writer panicked")).transpose();

    let output = match (result, dumped) {
        (Ok(out), Ok(d)) => {
            manifest.files.extend(d.unwrap_or_default());
            out
        }
        (Err(e), _) => return Err(fail(manifest, &opts.out_dir, started, e)),
        (_, Err(e)) => return Err(fail(manifest, &opts.out_dir, started, e.into())),
    };

    let mut files = vec![(ESTIMATES_FILE.to_string(), output.estimates.to_csv())];
    files.extend(output.tables.iter().cloned());
    for (name, bytes) in &files {
        std::fs::write(opts.out_dir.join(name), bytes)?;
        manifest.files.insert(name.clone(), sha256_hex(bytes));
    }
    manifest.assertions = output.all_assertions();
    manifest.status = if manifest.assertions.iter().all(|a| a.passed) { RunStatus::Passed } else { RunStatus::Failed };
    manifest.wall_time_secs = Some(started.elapsed().as_secs_f64());
    manifest.write(&opts.out_dir)?;
    Ok(RunOutcome { manifest, output })
}

fn fail(mut manifest: RunManifest, dir: &Path, started: Instant, e: HarnessError) -> HarnessError {
    manifest.status = RunStatus::Error;
    manifest.error = Some(e.to_string());
    manifest.wall_time_secs = Some(started.elapsed().as_secs_f64());
    if let Err(io) = manifest.write(dir) {
        log::error!("could not finalize the manifest: {io}");
    }
    e
}
