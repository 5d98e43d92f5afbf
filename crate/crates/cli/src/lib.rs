//! Experiment driver for fraclab: named experiments, INI configs, artifacts
//! and reproducibility manifests.

use std::path::{Path, PathBuf};
use std::time::Instant;

pub mod config;
pub mod experiments;
pub mod export;
pub mod manifest;

pub use config::{ConfigError, Experiment, ExperimentConfig};
pub use experiments::{execute, Check, ExperimentError, Outcome};
pub use export::{export, ExportError, ExportFormat};
pub use manifest::{ArtifactEntry, Manifest, MANIFEST_FILE};

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "FRACLAB_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` or 1 means single-threaded.
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    /// Takes precedence over the config's `output`.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("cli::ConfigError: {0}")]
    Config(#[from] ConfigError),
    #[error("{kind}: {0}", kind = .0.kind())]
    Numerical(fraclab_core::Error),
    #[error("cli::Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cli::ThreadPool: {0}")]
    Pool(String),
}

impl From<ExperimentError> for RunError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(c) => RunError::Config(c),
            ExperimentError::Numerical(n) => RunError::Numerical(n),
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_USAGE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub outcome: Outcome,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.outcome.passed()
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_OK
        } else {
            EXIT_NUMERICAL
        }
    }
}

/// Runs one experiment and writes its artifacts and manifest.
///
/// The manifest is written even when a check fails; its `status` says so.
pub fn run_config(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport, RunError> {
    let cfg = match opts.seed {
        Some(seed) => cfg.clone().with_seed(seed),
        None => cfg.clone(),
    };
    let threads = opts.threads.unwrap_or(1).max(1);
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| RunError::Pool(e.to_string()))?;
    let start = Instant::now();
    let mut outcome = pool.install(|| execute(&cfg))?;
    outcome.wall_times.insert("total".into(), start.elapsed().as_secs_f64());

    let out_dir = opts.out_dir.clone().unwrap_or_else(|| cfg.output.clone());
    std::fs::create_dir_all(&out_dir)?;
    let mut artifacts = Vec::with_capacity(outcome.artifacts.len());
    for a in &outcome.artifacts {
        std::fs::write(out_dir.join(&a.name), &a.bytes)?;
        artifacts.push(ArtifactEntry {
            path: a.name.clone(),
            sha256: manifest::sha256_hex(&a.bytes),
            bytes: a.bytes.len() as u64,
        });
    }
    let manifest = Manifest {
        tool: "fraclab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: cfg.experiment.name().into(),
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        threads,
        status: if outcome.passed() { "passed" } else { "failed" }.into(),
        artifacts,
        checks: outcome.checks.clone(),
        metrics: outcome.metrics.clone(),
        iterations: outcome.iterations.clone(),
        wall_times: outcome.wall_times.clone(),
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(RunReport { out_dir, manifest, outcome })
}

/// Loads the config for `experiment` (the shipped default when `config` is
/// `None`) and checks that it names the same experiment.
pub fn resolve_config(experiment: &str, config: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    let requested: Experiment = experiment.parse()?;
    let cfg = match config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default_for(requested),
    };
    if cfg.experiment != requested {
        return Err(ConfigError::WrongExperiment {
            requested: requested.name().into(),
            found: cfg.experiment.name().into(),
        });
    }
    Ok(cfg)
}

/// The `run` command: prints a report and returns the process exit code.
pub fn run(experiment: &str, config: Option<&Path>, opts: &RunOptions) -> i32 {
    let result = resolve_config(experiment, config).map_err(RunError::from).and_then(|cfg| run_config(&cfg, opts));
    match result {
        Ok(report) => {
            for c in &report.outcome.checks {
                println!("{c}");
            }
            println!("manifest: {}", report.out_dir.join(MANIFEST_FILE).display());
            if !report.passed() {
                eprintln!("{experiment}: checks failed");
            }
            report.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
