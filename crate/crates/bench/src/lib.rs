//! Sweep runner and summary tooling for taskchain benchmarks.
//!
//! Results CSV columns: `model,s,n,seed,steps,wall_ms,digest`.
//! Summary CSV columns: `model,s,n,mean_ms,sem_ms,runs`.

pub mod summary;
pub mod sweep;

pub use summary::{summarize, SummaryRow};
pub use sweep::{run_sweep, Preset, ResultRow, SweepSpec};

/// Physical parallelism available to this process.
pub fn available_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
