//! Experiment harness: synthetic networks, the moment check, policy
//! benchmarks, the sample-size study and the ranking evaluation. Every table
//! row carries the config hash, the artifact version and the seed.

mod benchmark;
mod config;
mod convergence;
mod network;
mod predict;
mod replicate;
mod train;
mod validate;

use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub use benchmark::{run_benchmark, BenchmarkReport, BenchmarkRow, SummaryRow};
pub use config::{
    BudgetRedraw, ConvergenceConfig, ExperimentConfig, Method, PredictionConfig, SweepAxis, Uniform, ValidationConfig,
};
pub use convergence::{run_convergence, ConvergenceReport, ConvergenceRow};
pub use network::{draw_budgets, follower_matrix, generate_network, random_excitation, SyntheticNetwork};
pub use predict::{run_predict_rank, RankReport, RankRow};
pub use train::{simulate_methods, train_policy, IterationRow, TrainReport, TrajectoryRecord};
pub use validate::{validate_moments, MomentRow, ValidationReport};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

/// Stream identifiers under the master seed.
pub(crate) mod stream {
    pub const NETWORK: u64 = 1;
    pub const BUDGET: u64 = 2;
    pub const SAMPLES: u64 = 3;
    pub const SAMPLE_BUDGET: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const RANDOM_POLICY: u64 = 6;
    pub const VALIDATION: u64 = 7;
    pub const PREDICT: u64 = 8;
    pub const CONVERGENCE: u64 = 9;
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
