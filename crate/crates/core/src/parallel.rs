//! Worker-count control.
//!
//! `EVIGRID_THREADS` caps the number of workers; `0` or unset means one
//! worker per available core. Results never depend on the worker count.

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "EVIGRID_THREADS";

/// Parses a worker-count setting; `None` and `"0"` select automatic sizing.
pub fn parse_threads(value: Option<&str>) -> Result<usize> {
    match value.map(str::trim) {
        None | Some("") => Ok(0),
        Some(v) => v
            .parse::<usize>()
            .map_err(|_| Error::InvalidParameter(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'"))),
    }
}

/// Worker count requested through the environment (0 = auto).
pub fn threads_from_env() -> Result<usize> {
    parse_threads(std::env::var(THREADS_ENV).ok().as_deref())
}

/// Runs `f` inside a dedicated pool of `threads` workers (0 = auto).
pub fn with_workers<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(err) => {
            log::warn!("falling back to the global pool: {err}");
            f()
        }
    }
}
