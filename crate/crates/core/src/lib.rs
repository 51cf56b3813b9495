//! Adaptive shared-memory parallel execution of agent-based simulations.
//!
//! A simulation is written as a sequence of tasks, each split into a creation
//! part (run serially, in order, by whichever worker reaches the end of the
//! chain) and an execution part (run by any worker as soon as its records
//! show no uncompleted task it depends on). The outcome is bit-identical to
//! executing the tasks one after another in creation order.
//!
//! ```
//! use taskchain::cultural::{CulturalModel, CulturalParams};
//! use taskchain::{engine, verify, EngineConfig};
//!
//! let params = CulturalParams { agents: 50, features: 8, traits: 3, omega_gate: 0.0, steps: 500 };
//! let parallel = CulturalModel::new(params.clone(), 7).unwrap();
//! let out = engine::run(&parallel, &EngineConfig::new(3, 7)).unwrap();
//!
//! let reference = CulturalModel::new(params, 7).unwrap();
//! assert_eq!(out.digest, verify::run_sequential(&reference, 7).digest);
//! ```

pub mod chain;
pub mod cultural;
pub mod engine;
pub mod error;
pub mod model;
pub mod rng;
pub mod sir;
pub mod trace;
pub mod verify;

pub use chain::{Chain, Phase, Task, TaskId};
pub use engine::{run, CycleOutcome, Engine, EngineConfig, Handling, RunOutput, Worker};
pub use error::{Error, Result};
pub use model::{Model, ModelKind};
pub use trace::{EventKind, TraceEvent};
