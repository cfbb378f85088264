//! Experiment harness around `qpcert`: JSON configs, certification runs
//! written as CSV, cross-validation of C, attack checks of earlier results
//! and plot-ready report tables.

use std::fs;
use std::path::{Path, PathBuf};

use qpcert::cert::CertError;
use qpcert::graphdata::{save_graph, GraphError};

pub mod certify;
pub mod check;
pub mod config;
pub mod cv;
pub mod output;
pub mod report;

pub use certify::{cmd_certify, CertifyOutcome};
pub use check::{cmd_attack_check, AttackCheckReport};
pub use config::{ExperimentConfig, DeltaScale};
pub use cv::{cmd_cv, CvResult};
pub use output::{ResultRow, Summary};
pub use report::{cmd_report, Report};

/// Exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code when some nodes or groups failed but the run completed.
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no result rows found under {}", .0.display())]
    EmptyReport(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            _ => 1,
        }
    }
}

pub(crate) fn thread_pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.thread_count()?)
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))
}

/// Writes the graph that run seed `seed` uses (default: the first grid seed)
/// to `out`, or to `<output_dir>/graph_seed<seed>.json`.
pub fn cmd_gen_csbm(cfg: &ExperimentConfig, seed: Option<u64>, out: Option<&Path>) -> Result<PathBuf, CliError> {
    if cfg.dataset.csbm.is_none() {
        return Err(CliError::Config("gen-csbm needs dataset.csbm".into()));
    }
    let seed = seed.unwrap_or(cfg.scenarios.seeds[0]);
    let graph = cfg.graph_for_seed(seed)?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => cfg.output_dir.join(format!("graph_seed{seed}.json")),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_graph(&graph, &path)?;
    Ok(path)
}
