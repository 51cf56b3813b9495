//! Benchmark sweeps: one engine run per `(s, n, seed)` cell, strictly one
//! at a time.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use taskchain::cultural::{CulturalModel, CulturalParams};
use taskchain::sir::{partition_and_aggregate, SirModel, SirParams, SirState};
use taskchain::verify::{
    ground_truth_deps, run_sequential, validate_trace, GroundTruthDeps, ValidationReport,
};
use taskchain::{run, EngineConfig, Error, Model, ModelKind, TraceEvent};

pub const RESULT_HEADER: [&str; 7] = ["model", "s", "n", "seed", "steps", "wall_ms", "digest"];

/// Watchdog for multi-worker cells, as a multiple of the same cell's
/// single-worker time.
pub const WATCHDOG_FACTOR: f64 = 20.0;

/// Watchdog for single-worker cells.
pub const BASE_WATCHDOG: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub model: ModelKind,
    /// Task size proxy: features `F` (cultural) or subset size (SIR).
    pub sweep: Vec<usize>,
    pub workers: Vec<usize>,
    pub seeds: usize,
    pub base_seed: u64,
    pub cycle_cap: usize,
    /// Parameter template; `features` is overridden per cell.
    pub cultural: CulturalParams,
    /// Parameter template; `subset_size` is overridden per cell.
    pub sir: SirParams,
    pub trace: bool,
    pub watchdog_factor: f64,
}

impl SweepSpec {
    pub fn new(model: ModelKind, preset: Preset) -> Self {
        let (cultural, sir) = match preset {
            Preset::Desk => (CulturalParams::desk_scale(10), SirParams::desk_scale(10)),
            Preset::Full => (CulturalParams::full_scale(10), SirParams::full_scale(10)),
        };
        let sweep = match model {
            ModelKind::Cultural => vec![10, 50, 100, 200],
            ModelKind::Sir => vec![10, 25, 50, 100, 200],
        };
        SweepSpec {
            model,
            sweep,
            workers: (1..=5).collect(),
            seeds: 5,
            base_seed: 1,
            cycle_cap: EngineConfig::DEFAULT_CYCLE_CAP,
            cultural,
            sir,
            trace: false,
            watchdog_factor: WATCHDOG_FACTOR,
        }
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.seeds as u64).map(|i| self.base_seed + i)
    }

    pub fn steps(&self) -> u64 {
        match self.model {
            ModelKind::Cultural => self.cultural.steps,
            ModelKind::Sir => self.sir.steps,
        }
    }

    pub fn cultural_params(&self, s: usize) -> CulturalParams {
        CulturalParams {
            features: s,
            ..self.cultural.clone()
        }
    }

    pub fn sir_params(&self, s: usize) -> SirParams {
        SirParams {
            subset_size: s,
            ..self.sir.clone()
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        if self.sweep.is_empty() {
            return bad("sweep list is empty".into());
        }
        if self.workers.is_empty() || self.workers.contains(&0) {
            return bad("worker counts must be positive".into());
        }
        if self.cycle_cap == 0 {
            return bad("cycle cap must be at least 1".into());
        }
        if self.watchdog_factor.is_nan() || self.watchdog_factor <= 0.0 {
            return bad("watchdog factor must be positive".into());
        }
        for &s in &self.sweep {
            match self.model {
                ModelKind::Cultural => self.cultural_params(s).validate()?,
                ModelKind::Sir => self.sir_params(s).validate()?,
            }
        }
        Ok(())
    }

    /// Worker counts with 1 first, so every cell has its watchdog reference.
    fn ordered_workers(&self) -> Vec<usize> {
        let mut w = self.workers.clone();
        w.sort_unstable();
        w.dedup();
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub s: usize,
    pub n: usize,
    pub seed: u64,
    pub steps: u64,
    /// `-1` when the watchdog aborted the run.
    pub wall_ms: f64,
    /// Hex state digest; empty when aborted.
    pub digest: String,
}

impl ResultRow {
    pub fn aborted(&self) -> bool {
        self.wall_ms < 0.0
    }
}

pub fn format_digest(d: u64) -> String {
    format!("{d:016x}")
}

/// Outcome of one timed run.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub wall: Option<Duration>,
    pub digest: Option<u64>,
    pub trace: Vec<TraceEvent>,
}

fn finish(result: Result<taskchain::RunOutput, Error>, extra: Duration) -> Result<CellRun, Error> {
    match result {
        Ok(out) => Ok(CellRun {
            wall: Some(out.wall + extra),
            digest: Some(out.digest),
            trace: out.trace,
        }),
        Err(Error::Watchdog { partial_trace, .. }) => Ok(CellRun {
            wall: None,
            digest: None,
            trace: partial_trace,
        }),
        Err(e) => Err(e),
    }
}

/// Times one run. Initial-state generation is outside the timed region;
/// for SIR the partition and aggregate graph are built inside it.
pub fn run_cell(spec: &SweepSpec, s: usize, config: &EngineConfig) -> Result<CellRun, Error> {
    let seed = config.master_seed;
    match spec.model {
        ModelKind::Cultural => {
            let model = CulturalModel::new(spec.cultural_params(s), seed)?;
            finish(run(&model, config), Duration::ZERO)
        }
        ModelKind::Sir => {
            let state = SirState::new(spec.sir_params(s), seed)?;
            let start = Instant::now();
            let partition = partition_and_aggregate(state.graph(), s)?;
            let model = SirModel::new(state, partition)?;
            let setup = start.elapsed();
            finish(run(&model, config), setup)
        }
    }
}

/// Runs every `(s, seed, n)` cell and hands each row to `sink` as soon as it
/// is known. Aborted runs are reported as rows with `wall_ms = -1`.
pub fn run_sweep(
    spec: &SweepSpec,
    mut sink: impl FnMut(&ResultRow, &CellRun) -> Result<(), Error>,
) -> Result<Vec<ResultRow>, Error> {
    spec.validate()?;
    let mut rows = Vec::new();
    for &s in &spec.sweep {
        for seed in spec.seeds() {
            let mut reference: Option<Duration> = None;
            for n in spec.ordered_workers() {
                let watchdog = match reference {
                    Some(t1) if n > 1 => t1.mul_f64(spec.watchdog_factor),
                    _ => BASE_WATCHDOG,
                };
                let config = EngineConfig::new(n, seed)
                    .with_cycle_cap(spec.cycle_cap)
                    .with_trace(spec.trace)
                    .with_watchdog(Some(watchdog));
                let cell = run_cell(spec, s, &config)?;
                if n == 1 {
                    reference = cell.wall;
                }
                let row = ResultRow {
                    model: spec.model.to_string(),
                    s,
                    n,
                    seed,
                    steps: spec.steps(),
                    wall_ms: cell.wall.map_or(-1.0, |w| w.as_secs_f64() * 1e3),
                    digest: cell.digest.map(format_digest).unwrap_or_default(),
                };
                sink(&row, &cell)?;
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Sequential reference for one `(s, seed)` cell.
pub struct Reference {
    pub digest: u64,
    pub deps: GroundTruthDeps,
}

fn reference_of<M: Model>(model: &M, seed: u64) -> Reference {
    let seq = run_sequential(model, seed);
    let deps = ground_truth_deps(model, &seq.log);
    Reference {
        digest: seq.digest,
        deps,
    }
}

pub fn reference(spec: &SweepSpec, s: usize, seed: u64) -> Result<Reference, Error> {
    Ok(match spec.model {
        ModelKind::Cultural => {
            reference_of(&CulturalModel::new(spec.cultural_params(s), seed)?, seed)
        }
        ModelKind::Sir => reference_of(
            &SirModel::from_state(SirState::new(spec.sir_params(s), seed)?)?,
            seed,
        ),
    })
}

/// Engine run checked against the sequential reference.
#[derive(Debug, Clone)]
pub struct CellCheck {
    pub digest_matches: bool,
    pub report: ValidationReport,
}

pub fn check_cell(reference: &Reference, cell: &CellRun) -> CellCheck {
    CellCheck {
        digest_matches: cell.digest == Some(reference.digest),
        report: validate_trace(&cell.trace, &reference.deps),
    }
}

/// Rows whose digest differs from another row of the same `(model, s, seed)`.
pub fn digest_mismatches(rows: &[ResultRow]) -> Vec<&ResultRow> {
    use std::collections::HashMap;
    let mut first: HashMap<(&str, usize, u64), &str> = HashMap::new();
    let mut bad = Vec::new();
    for r in rows.iter().filter(|r| !r.aborted()) {
        let d = first
            .entry((r.model.as_str(), r.s, r.seed))
            .or_insert(r.digest.as_str());
        if *d != r.digest {
            bad.push(r);
        }
    }
    bad
}
