//! Experiment runners behind the `todlab` command line. Each runner takes a
//! validated config, writes its outputs under `output_dir` and returns the
//! in-memory results as well.

use std::path::Path;

use crate::error::{Error, Result};

pub mod al;
pub mod bounds;
pub mod config;
pub mod report;
pub mod select;
pub mod table;

pub use al::{al_compare, al_run, al_sweep, compare_samplers, parse_grid_axis, CompareOutput, RunOutput, SweepOutput};
pub use bounds::{run_bounds, write_bounds, BoundsOptions, BoundsOutput};
pub use config::{load_config, parse_config, parse_set, ExperimentConfig, LoadedConfig, OUTPUT_DIR_ENV};
pub use report::report;
pub use select::{select_run, SelectOutput};

pub(crate) fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Run `f` on a pool of `jobs` threads, or on the global pool.
pub(crate) fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::config("--jobs", "must be positive")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|p| p.install(f))
            .map_err(|e| Error::Runtime(format!("thread pool: {e}"))),
    }
}
