//! The contract between a simulation model and the engine.
//!
//! A model is plugged in through two worker/task-side counterparts:
//!
//! * a **recipe** is produced when a task is created and consumed when it is
//!   executed. It must carry everything the execution needs besides shared
//!   model state, including the child seed of the task's random stream.
//! * a **record** is a worker-local summary of the tasks the worker has
//!   traversed in its current cycle without seeing them complete. The engine
//!   asks the record whether the task at hand may be executed.
//!
//! The engine never inspects either type.

use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use fnv::FnvHasher;

use crate::error::Error;

pub trait Model: Sync {
    type Recipe: Clone + fmt::Debug + Send + Sync;
    type Record: Send;
    /// Creation cursor and master random stream. Only ever touched under the
    /// engine's creation serialization.
    type Creator: Send;

    /// Fresh creation state for a run driven by `master_seed`.
    fn creator(&self, master_seed: u64) -> Self::Creator;

    /// Next recipe of the deterministic creation sequence, or `None` once the
    /// task budget is exhausted.
    fn create(&self, creator: &mut Self::Creator) -> Option<Self::Recipe>;

    fn new_record(&self) -> Self::Record;

    /// `true` if executing `recipe` now could violate a causal link with a
    /// task already absorbed into `record`. May over-approximate, never
    /// under-approximate.
    fn depends(&self, record: &Self::Record, recipe: &Self::Recipe) -> bool;

    /// Accounts for a skipped (dependent or busy) task. Idempotent.
    fn absorb(&self, record: &mut Self::Record, recipe: &Self::Recipe);

    /// Returns `record` to its freshly constructed state.
    fn reset(&self, record: &mut Self::Record);

    /// Carries out the execution part of a task against shared state.
    ///
    /// The engine only calls this once every causal predecessor has
    /// completed, and only concurrently with recipes the record rules make
    /// independent.
    fn execute(&self, recipe: &Self::Recipe);

    /// Fingerprint of the full agent state, in fixed agent order.
    fn state_digest(&self) -> u64;

    /// Ground-truth conflict between an `earlier` and a `later` task in
    /// creation order: some variable written by one is read or written by
    /// the other. Used only for verification.
    fn conflicts(&self, earlier: &Self::Recipe, later: &Self::Recipe) -> bool;
}

/// FNV-1a over a sequence of state bytes, prefixed by the shape words.
pub fn digest_bytes(shape: &[u64], bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h = FnvHasher::default();
    for &w in shape {
        h.write_u64(w);
    }
    for b in bytes {
        h.write_u8(b);
    }
    h.finish()
}

/// The models shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Cultural,
    Sir,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cultural => "cultural",
            ModelKind::Sir => "sir",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cultural" => Ok(ModelKind::Cultural),
            "sir" => Ok(ModelKind::Sir),
            other => Err(Error::UnknownModel(other.to_string())),
        }
    }
}
