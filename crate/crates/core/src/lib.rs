//! Deterministic simulator and harness for multi-agent exploratory GUI
//! testing: a screen-graph app model with injectable defects, a
//! Planner/Executor/Monitor/Reflector control loop, scripted and remote
//! backends, bench task synthesis, and recall/precision/F1 scoring.

pub mod agents;
pub mod bundle;
pub mod defect;
pub mod demo;
pub mod error;
pub mod eval;
pub mod orchestrator;
pub mod persist;
pub mod scalar;
pub mod screen;
pub mod synth;
pub mod trajectory;

use sha2::{Digest, Sha256};

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Report with `f64` metrics.
pub type EvalReport = eval::EvalReport<f64>;
/// Report with `f32` metrics.
pub type EvalReportF32 = eval::EvalReport<f32>;
pub type CellMetrics = eval::CellMetrics<f64>;
pub type PassScore = eval::PassScore<f64>;

/// Named seed derivation: first 8 bytes of SHA-256 over the root seed, the
/// task id and the run index.
pub fn derive_seed(seed: u64, task_id: &str, run_index: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(task_id.as_bytes());
    h.update([0]);
    h.update(run_index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
