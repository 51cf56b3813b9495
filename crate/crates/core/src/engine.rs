//! Workers cycling over the chain.
//!
//! Lock discipline:
//!
//! * A worker located at a task holds that task's occupancy guard. It only
//!   ever parks on a pending task, and acquires occupancy guards in ascending
//!   task id order, so workers queue behind each other and never overtake.
//! * Executing tasks are passed without taking their occupancy: the worker
//!   absorbs the recipe and keeps walking.
//! * The erase guard covers all link reads and writes, appends, and the
//!   creation routine. It is never held while waiting on the occupancy of a
//!   pending task. The eraser holds it while re-acquiring the occupancy of
//!   the task it executed; that task is executing, so any other holder is a
//!   worker about to step past it.
//! * The enter guard serializes creation on an empty chain and the
//!   termination check. It is taken before the erase guard, never after.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, MutexGuard};

use crate::chain::{Chain, Links, Occupancy, Phase, Task, TaskId};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::trace::{EventKind, TraceEvent};

const LOCK_POLL: Duration = Duration::from_millis(2);

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub n_workers: usize,
    /// Maximum number of tasks one worker may create per cycle.
    pub cycle_cap: usize,
    pub master_seed: u64,
    pub trace_enabled: bool,
    /// Abort the run if it has not finished after this long.
    pub watchdog: Option<Duration>,
}

impl EngineConfig {
    pub const DEFAULT_CYCLE_CAP: usize = 6;

    pub fn new(n_workers: usize, master_seed: u64) -> Self {
        EngineConfig {
            n_workers,
            cycle_cap: Self::DEFAULT_CYCLE_CAP,
            master_seed,
            trace_enabled: false,
            watchdog: None,
        }
    }

    pub fn with_cycle_cap(mut self, cycle_cap: usize) -> Self {
        self.cycle_cap = cycle_cap;
        self
    }

    pub fn with_trace(mut self, enabled: bool) -> Self {
        self.trace_enabled = enabled;
        self
    }

    pub fn with_watchdog(mut self, timeout: Option<Duration>) -> Self {
        self.watchdog = timeout;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_workers == 0 {
            return Err(Error::Config("n_workers must be at least 1".into()));
        }
        if self.cycle_cap == 0 {
            return Err(Error::Config("cycle_cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// What a worker decides about the task it is located at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Handling {
    Execute,
    SkipDependent,
    SkipBusy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleOutcome {
    ExecutedOne(TaskId),
    ExhaustedNoWork,
    CapReached,
}

/// Raised inside a worker when the watchdog has fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Aborted;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkerStats {
    pub cycles: u64,
    pub created: u64,
    pub executed: u64,
    pub skipped_dependent: u64,
    pub skipped_busy: u64,
    pub cap_reached: u64,
}

impl WorkerStats {
    fn merge(&mut self, other: &WorkerStats) {
        self.cycles += other.cycles;
        self.created += other.created;
        self.executed += other.executed;
        self.skipped_dependent += other.skipped_dependent;
        self.skipped_busy += other.skipped_busy;
        self.cap_reached += other.cap_reached;
    }
}

struct Position<R> {
    task: Arc<Task<R>>,
    _occupancy: Occupancy,
}

pub struct Worker<M: Model> {
    id: u32,
    record: M::Record,
    created_this_cycle: usize,
    position: Option<Position<M::Recipe>>,
    events: Vec<TraceEvent>,
    stats: WorkerStats,
}

impl<M: Model> Worker<M> {
    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn record(&self) -> &M::Record {
        &self.record
    }

    pub fn created_this_cycle(&self) -> usize {
        self.created_this_cycle
    }

    /// Id of the task the worker is located at, if any.
    pub fn position(&self) -> Option<TaskId> {
        self.position.as_ref().map(|p| p.task.id())
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn stats(&self) -> &WorkerStats {
        &self.stats
    }
}

struct Creation<X> {
    creator: X,
    exhausted: bool,
}

/// Shared state of one run: the chain, the creation routine and the guards.
pub struct Engine<'m, M: Model> {
    model: &'m M,
    chain: Chain<M::Recipe>,
    // Only locked while the erase guard is held.
    creation: Mutex<Creation<M::Creator>>,
    seq: AtomicU64,
    cycle_cap: usize,
    trace_enabled: bool,
    abort: AtomicBool,
}

enum Located<R> {
    Task(Arc<Task<R>>),
    Exhausted,
    Cap,
}

impl<'m, M: Model> Engine<'m, M> {
    pub fn new(model: &'m M, config: &EngineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Engine {
            model,
            chain: Chain::new(),
            creation: Mutex::new(Creation {
                creator: model.creator(config.master_seed),
                exhausted: false,
            }),
            seq: AtomicU64::new(0),
            cycle_cap: config.cycle_cap,
            trace_enabled: config.trace_enabled,
            abort: AtomicBool::new(false),
        })
    }

    pub fn chain(&self) -> &Chain<M::Recipe> {
        &self.chain
    }

    pub fn model(&self) -> &M {
        self.model
    }

    pub fn worker(&self, id: u32) -> Worker<M> {
        Worker {
            id,
            record: self.model.new_record(),
            created_this_cycle: 0,
            position: None,
            events: Vec::new(),
            stats: WorkerStats::default(),
        }
    }

    pub fn abort(&self) {
        self.abort.store(true, Ordering::Release);
    }

    fn aborted(&self) -> bool {
        self.abort.load(Ordering::Acquire)
    }

    fn emit(&self, w: &mut Worker<M>, task_id: TaskId, kind: EventKind) {
        if self.trace_enabled {
            let seq = self.seq.fetch_add(1, Ordering::AcqRel);
            w.events.push(TraceEvent {
                seq,
                worker_id: w.id,
                task_id,
                kind,
            });
        }
    }

    fn acquire<'a, T>(&self, m: &'a Mutex<T>) -> Result<MutexGuard<'a, T>, Aborted> {
        if let Some(g) = m.try_lock() {
            return Ok(g);
        }
        loop {
            if let Some(g) = m.try_lock_for(LOCK_POLL) {
                return Ok(g);
            }
            if self.aborted() {
                return Err(Aborted);
            }
        }
    }

    fn acquire_occupancy(&self, task: &Task<M::Recipe>) -> Result<Occupancy, Aborted> {
        let m = task.occupancy();
        if let Some(g) = m.try_lock_arc() {
            return Ok(g);
        }
        loop {
            if let Some(g) = m.try_lock_arc_for(LOCK_POLL) {
                return Ok(g);
            }
            if self.aborted() {
                return Err(Aborted);
            }
        }
    }

    /// Decides what to do with `task`. The worker either holds the task's
    /// occupancy guard or has observed it executing.
    ///
    /// On `Execute` the task has been moved to the executing phase.
    pub fn try_handle(
        &self,
        w: &mut Worker<M>,
        task: &Task<M::Recipe>,
        occ: Option<&Occupancy>,
    ) -> Handling {
        if task.phase() == Phase::Executing {
            self.model.absorb(&mut w.record, task.recipe());
            w.stats.skipped_busy += 1;
            self.emit(w, task.id(), EventKind::SkipBusy);
            return Handling::SkipBusy;
        }
        let occ = occ.expect("handling a pending task requires its occupancy guard");
        if self.model.depends(&w.record, task.recipe()) {
            self.model.absorb(&mut w.record, task.recipe());
            w.stats.skipped_dependent += 1;
            self.emit(w, task.id(), EventKind::SkipDependent);
            return Handling::SkipDependent;
        }
        task.begin_execution(occ);
        self.emit(w, task.id(), EventKind::ExecStart);
        Handling::Execute
    }

    /// Runs the creation routine at the end of the chain.
    fn create(
        &self,
        links: &mut Links<M::Recipe>,
        w: &mut Worker<M>,
    ) -> Option<Arc<Task<M::Recipe>>> {
        let mut creation = self.creation.lock();
        if creation.exhausted {
            return None;
        }
        match self.model.create(&mut creation.creator) {
            Some(recipe) => {
                let task = links.append(recipe);
                w.created_this_cycle += 1;
                w.stats.created += 1;
                self.emit(w, task.id(), EventKind::Created);
                Some(task)
            }
            None => {
                creation.exhausted = true;
                None
            }
        }
    }

    /// Finds the first non-executing task after the worker's position,
    /// absorbing executing tasks on the way, or extends the chain.
    fn locate(&self, w: &mut Worker<M>) -> Result<Located<M::Recipe>, Aborted> {
        let mut links = self.acquire(self.chain.links_mutex())?;
        let mut cursor = match &w.position {
            Some(p) => links.next_of(&p.task),
            None => links.head(),
        };
        while let Some(t) = cursor.take() {
            if t.phase() != Phase::Executing {
                return Ok(Located::Task(t));
            }
            self.try_handle(w, &t, None);
            cursor = links.next_of(&t);
        }

        // End of the chain.
        if w.created_this_cycle >= self.cycle_cap {
            return Ok(Located::Cap);
        }
        if !links.is_empty() || w.position.is_some() {
            return Ok(match self.create(&mut links, w) {
                Some(t) => Located::Task(t),
                None => Located::Exhausted,
            });
        }

        // Empty chain: the first worker in under the enter guard creates.
        drop(links);
        let _enter = self.acquire(self.chain.enter_mutex())?;
        let mut links = self.acquire(self.chain.links_mutex())?;
        if !links.is_empty() {
            let head = links.head().expect("non-empty chain has a head");
            return Ok(Located::Task(head));
        }
        Ok(match self.create(&mut links, w) {
            Some(t) => Located::Task(t),
            None => Located::Exhausted,
        })
    }

    fn erase(&self, w: &mut Worker<M>, task: &Task<M::Recipe>) -> Result<(), Aborted> {
        let mut links = self.acquire(self.chain.links_mutex())?;
        let occ = self.acquire_occupancy(task)?;
        links.erase(task, &occ);
        self.emit(w, task.id(), EventKind::Erased);
        Ok(())
    }

    /// One traversal from the start of the chain.
    pub fn worker_cycle(&self, w: &mut Worker<M>) -> Result<CycleOutcome, Aborted> {
        w.position = None;
        self.model.reset(&mut w.record);
        w.created_this_cycle = 0;
        w.stats.cycles += 1;

        loop {
            let task = match self.locate(w)? {
                Located::Task(t) => t,
                Located::Exhausted => {
                    w.position = None;
                    return Ok(CycleOutcome::ExhaustedNoWork);
                }
                Located::Cap => {
                    w.position = None;
                    w.stats.cap_reached += 1;
                    return Ok(CycleOutcome::CapReached);
                }
            };

            let occ = self.acquire_occupancy(&task)?;
            match task.phase() {
                // Executed and erased while we queued; rescan from our position.
                Phase::Erased => continue,
                Phase::Executing => {
                    drop(occ);
                    self.try_handle(w, &task, None);
                    continue;
                }
                Phase::Pending => {}
            }

            match self.try_handle(w, &task, Some(&occ)) {
                Handling::SkipDependent | Handling::SkipBusy => {
                    // Moving on releases the previous task's guard.
                    w.position = Some(Position {
                        task,
                        _occupancy: occ,
                    });
                }
                Handling::Execute => {
                    w.position = None;
                    drop(occ);
                    self.model.execute(task.recipe());
                    self.emit(w, task.id(), EventKind::ExecEnd);
                    self.erase(w, &task)?;
                    w.stats.executed += 1;
                    return Ok(CycleOutcome::ExecutedOne(task.id()));
                }
            }
        }
    }

    /// Cycles until the model is exhausted and the chain is empty.
    pub fn work(&self, w: &mut Worker<M>) -> Result<(), Aborted> {
        loop {
            match self.worker_cycle(w)? {
                CycleOutcome::ExecutedOne(_) => {}
                CycleOutcome::CapReached => thread::yield_now(),
                CycleOutcome::ExhaustedNoWork => {
                    let done = {
                        let _enter = self.acquire(self.chain.enter_mutex())?;
                        let links = self.acquire(self.chain.links_mutex())?;
                        links.is_empty() && self.creation.lock().exhausted
                    };
                    if done {
                        return Ok(());
                    }
                    thread::yield_now();
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub digest: u64,
    /// Events of all workers in `seq` order. Empty unless tracing was on.
    pub trace: Vec<TraceEvent>,
    /// Parallel region only.
    pub wall: Duration,
    pub tasks: u64,
    pub stats: WorkerStats,
}

/// Runs the model to completion on `config.n_workers` threads.
pub fn run<M: Model>(model: &M, config: &EngineConfig) -> Result<RunOutput> {
    let engine = Engine::new(model, config)?;
    let (tx, rx) = mpsc::channel();

    let start = Instant::now();
    let mut finished: Vec<(Vec<TraceEvent>, WorkerStats, bool)> =
        Vec::with_capacity(config.n_workers);
    let mut timed_out = false;
    thread::scope(|scope| {
        for id in 0..config.n_workers {
            let tx = tx.clone();
            let engine = &engine;
            scope.spawn(move || {
                let mut w = engine.worker(id as u32);
                let ok = engine.work(&mut w).is_ok();
                w.position = None;
                let _ = tx.send((w.events, w.stats, ok));
            });
        }
        drop(tx);

        let deadline = config.watchdog.map(|d| start + d);
        while finished.len() < config.n_workers {
            let msg = match deadline {
                Some(dl) if !timed_out => {
                    let left = dl.saturating_duration_since(Instant::now());
                    match rx.recv_timeout(left) {
                        Ok(m) => m,
                        Err(mpsc::RecvTimeoutError::Timeout) => {
                            timed_out = true;
                            engine.abort();
                            continue;
                        }
                        Err(mpsc::RecvTimeoutError::Disconnected) => break,
                    }
                }
                _ => match rx.recv() {
                    Ok(m) => m,
                    Err(_) => break,
                },
            };
            finished.push(msg);
        }
    });
    let wall = start.elapsed();

    let mut stats = WorkerStats::default();
    let mut trace = Vec::new();
    for (events, s, _) in &finished {
        stats.merge(s);
        trace.extend_from_slice(events);
    }
    trace.sort_unstable_by_key(|e| e.seq);

    if timed_out || finished.iter().any(|(_, _, ok)| !ok) {
        return Err(Error::Watchdog {
            elapsed_ms: wall.as_millis(),
            partial_trace: trace,
        });
    }

    let links = engine.chain.erase_guard();
    assert!(
        links.is_empty(),
        "run finished with {} tasks left",
        links.len()
    );
    let tasks = links.created();
    assert_eq!(tasks, links.erased());
    drop(links);

    Ok(RunOutput {
        digest: model.state_digest(),
        trace,
        wall,
        tasks,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    /// Tasks carry a set of cells; a task depends on any earlier one sharing
    /// a cell. Execution appends the task id to a per-cell log.
    struct Cells {
        recipes: Vec<Vec<usize>>,
        logs: Vec<parking_lot::Mutex<Vec<u64>>>,
    }

    impl Cells {
        fn new(n_cells: usize, recipes: Vec<Vec<usize>>) -> Self {
            Cells {
                recipes,
                logs: (0..n_cells).map(|_| Default::default()).collect(),
            }
        }
    }

    #[derive(Debug, Clone)]
    struct CellRecipe {
        id: u64,
        cells: Vec<usize>,
    }

    impl Model for Cells {
        type Recipe = CellRecipe;
        type Record = BTreeSet<usize>;
        type Creator = usize;

        fn creator(&self, _: u64) -> usize {
            0
        }
        fn create(&self, cursor: &mut usize) -> Option<CellRecipe> {
            let cells = self.recipes.get(*cursor)?.clone();
            let id = *cursor as u64;
            *cursor += 1;
            Some(CellRecipe { id, cells })
        }
        fn new_record(&self) -> Self::Record {
            BTreeSet::new()
        }
        fn depends(&self, record: &Self::Record, r: &CellRecipe) -> bool {
            r.cells.iter().any(|c| record.contains(c))
        }
        fn absorb(&self, record: &mut Self::Record, r: &CellRecipe) {
            record.extend(r.cells.iter().copied());
        }
        fn reset(&self, record: &mut Self::Record) {
            record.clear();
        }
        fn execute(&self, r: &CellRecipe) {
            for &c in &r.cells {
                self.logs[c].lock().push(r.id);
            }
        }
        fn state_digest(&self) -> u64 {
            let bytes: Vec<u8> = self
                .logs
                .iter()
                .flat_map(|l| {
                    l.lock()
                        .iter()
                        .flat_map(|v| v.to_le_bytes())
                        .collect::<Vec<_>>()
                })
                .collect();
            crate::model::digest_bytes(&[self.logs.len() as u64], bytes)
        }
        fn conflicts(&self, a: &CellRecipe, b: &CellRecipe) -> bool {
            a.cells.iter().any(|c| b.cells.contains(c))
        }
    }

    #[test]
    fn config_rejects_zero_values() {
        assert!(EngineConfig::new(0, 1).validate().is_err());
        assert!(EngineConfig::new(1, 1)
            .with_cycle_cap(0)
            .validate()
            .is_err());
        assert_eq!(EngineConfig::new(2, 1).cycle_cap, 6);
    }

    #[test]
    fn single_task_is_created_then_executed() {
        let model = Cells::new(1, vec![vec![0]]);
        let config = EngineConfig::new(1, 0).with_trace(true);
        let engine = Engine::new(&model, &config).unwrap();
        let mut w = engine.worker(0);
        assert_eq!(
            engine.worker_cycle(&mut w),
            Ok(CycleOutcome::ExecutedOne(0))
        );
        let kinds: Vec<_> = w.events().iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                EventKind::Created,
                EventKind::ExecStart,
                EventKind::ExecEnd,
                EventKind::Erased
            ]
        );
        assert!(engine.chain().erase_guard().is_empty());
        assert_eq!(
            engine.worker_cycle(&mut w),
            Ok(CycleOutcome::ExhaustedNoWork)
        );
    }

    #[test]
    fn exhausted_model_on_empty_chain() {
        let model = Cells::new(1, vec![]);
        let engine = Engine::new(&model, &EngineConfig::new(1, 0)).unwrap();
        let mut w = engine.worker(0);
        assert_eq!(
            engine.worker_cycle(&mut w),
            Ok(CycleOutcome::ExhaustedNoWork)
        );
        assert_eq!(w.position(), None);
    }

    #[test]
    fn executing_task_is_skipped_as_busy() {
        let model = Cells::new(2, vec![vec![0], vec![1]]);
        let engine = Engine::new(&model, &EngineConfig::new(1, 0).with_trace(true)).unwrap();
        let t0 = {
            let mut links = engine.chain().erase_guard();
            let mut creation = engine.creation.lock();
            links.append(model.create(&mut creation.creator).unwrap())
        };
        let occ = t0.occupancy().lock_arc();
        t0.begin_execution(&occ);
        drop(occ);

        let mut w = engine.worker(3);
        assert_eq!(engine.try_handle(&mut w, &t0, None), Handling::SkipBusy);
        assert!(w.record().contains(&0));
    }

    #[test]
    fn dependent_task_is_skipped_and_absorbed() {
        let model = Cells::new(2, vec![vec![0]]);
        let engine = Engine::new(&model, &EngineConfig::new(1, 0)).unwrap();
        let t = engine.chain().erase_guard().append(CellRecipe {
            id: 0,
            cells: vec![0, 1],
        });
        let occ = t.occupancy().lock_arc();
        let mut w = engine.worker(0);
        w.record.insert(1);
        assert_eq!(
            engine.try_handle(&mut w, &t, Some(&occ)),
            Handling::SkipDependent
        );
        assert!(w.record().contains(&0));
        assert_eq!(t.phase(), Phase::Pending);

        let mut fresh = engine.worker(1);
        assert_eq!(
            engine.try_handle(&mut fresh, &t, Some(&occ)),
            Handling::Execute
        );
        assert_eq!(t.phase(), Phase::Executing);
    }

    #[test]
    fn cap_stops_chain_growth() {
        // Every task touches cell 0, so once the head is busy nothing else can run.
        let model = Cells::new(1, vec![vec![0]; 20]);
        let engine = Engine::new(&model, &EngineConfig::new(2, 0).with_trace(true)).unwrap();
        let mut busy = engine.worker(0);
        // Worker 0 creates task 0 and starts executing it by hand.
        let t0 = match engine.locate(&mut busy).unwrap() {
            Located::Task(t) => t,
            _ => unreachable!(),
        };
        let occ = t0.occupancy().lock_arc();
        assert_eq!(
            engine.try_handle(&mut busy, &t0, Some(&occ)),
            Handling::Execute
        );
        drop(occ);

        let mut w = engine.worker(1);
        assert_eq!(engine.worker_cycle(&mut w), Ok(CycleOutcome::CapReached));
        assert_eq!(w.created_this_cycle(), 6);
        assert_eq!(
            engine.chain().erase_guard().ids(),
            (0..7).collect::<Vec<_>>()
        );
        let dependent = w
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::SkipDependent)
            .count();
        assert_eq!(dependent, 6);
        assert_eq!(w.position(), None);
    }

    #[test]
    fn zero_task_model_terminates_immediately() {
        let model = Cells::new(1, vec![]);
        let out = run(&model, &EngineConfig::new(3, 0).with_trace(true)).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.tasks, 0);
    }

    #[test]
    fn per_cell_order_matches_creation_order() {
        let recipes: Vec<Vec<usize>> = (0..400)
            .map(|i| {
                let mut cells = vec![i % 7, (i * 3 + 1) % 11];
                cells.dedup();
                cells
            })
            .collect();
        for n in 1..=4 {
            let model = Cells::new(11, recipes.clone());
            let out = run(&model, &EngineConfig::new(n, 0).with_cycle_cap(3)).unwrap();
            assert_eq!(out.tasks, 400);
            for (c, log) in model.logs.iter().enumerate() {
                let log = log.lock();
                assert!(
                    log.windows(2).all(|w| w[0] < w[1]),
                    "cell {c} out of order with n={n}"
                );
            }
        }
    }
}
