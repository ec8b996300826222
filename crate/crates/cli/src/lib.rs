//! Library behind the `otws` binary: flag resolution, run manifests and the
//! subcommand implementations.

pub mod args;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod manifest;
pub mod summary;

use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or config; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Failure while running; exit code 1.
    #[error(transparent)]
    Run(#[from] otws_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

/// The given seed, or one derived from the clock and announced on stderr.
pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let s = (nanos as u64) ^ ((nanos >> 64) as u64) ^ u64::from(std::process::id());
        eprintln!("seed: {s} (derived; pass --seed {s} to reproduce)");
        s
    })
}

/// Caps the global rayon pool at `OTWS_THREADS` workers when set.
pub fn init_thread_pool() -> Result<(), CliError> {
    let Ok(v) = std::env::var("OTWS_THREADS") else {
        return Ok(());
    };
    let n: usize =
        v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::Usage(format!("OTWS_THREADS={v:?} is not a positive integer"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}
