//! File formats, manifests and subcommands of the `dualrs` tool.

pub mod cli;
pub mod commands;
pub mod cubefile;
pub mod error;
pub mod imageio;
pub mod manifest;
pub mod output;

pub use cli::Cli;
pub use error::{CliError, CliResult};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "DUALRS_THREADS";

/// Configures the global worker pool from [`THREADS_ENV`], if set.
pub fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {n} worker threads: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}
