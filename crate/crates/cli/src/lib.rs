//! Configuration, experiment drivers and report writers behind the `mfentropy` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{dissipation, gradient_flow, hwbi, oracle, reproduce_figures, simulate_cmd, Check, Outcome};
pub use config::RunConfig;

/// Runs `f` on a dedicated pool of `workers` threads (all cores when zero).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    Ok(pool.install(f))
}
