//! Sequential reference execution and trace validation.
//!
//! The reference executor creates and immediately executes each task in
//! creation order, through the same model code the engine uses. The
//! validator then checks an engine trace against the exact set of causal
//! links of the recipe log.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};

use crate::chain::TaskId;
use crate::model::Model;
use crate::trace::{EventKind, TraceEvent};

#[derive(Debug, Clone)]
pub struct SequentialRun<R> {
    pub digest: u64,
    /// Recipes in creation order; index = task id.
    pub log: Vec<R>,
}

pub fn run_sequential<M: Model>(model: &M, master_seed: u64) -> SequentialRun<M::Recipe> {
    let mut creator = model.creator(master_seed);
    let mut log = Vec::new();
    while let Some(recipe) = model.create(&mut creator) {
        model.execute(&recipe);
        log.push(recipe);
    }
    SequentialRun {
        digest: model.state_digest(),
        log,
    }
}

/// All ordered pairs `(i, j)`, `i < j`, where task `j` must not start
/// before task `i` has completed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruthDeps {
    tasks: u64,
    pairs: Vec<(u32, u32)>,
}

impl GroundTruthDeps {
    pub fn from_pairs(tasks: u64, mut pairs: Vec<(u32, u32)>) -> Self {
        assert!(
            pairs.iter().all(|&(i, j)| i < j),
            "dependence pairs must respect creation order"
        );
        pairs.sort_unstable();
        pairs.dedup();
        GroundTruthDeps { tasks, pairs }
    }

    pub fn tasks(&self) -> u64 {
        self.tasks
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, earlier: TaskId, later: TaskId) -> bool {
        self.pairs
            .binary_search(&(earlier as u32, later as u32))
            .is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TaskId, TaskId)> + '_ {
        self.pairs.iter().map(|&(i, j)| (i as TaskId, j as TaskId))
    }
}

/// Brute-force pair scan of the model's conflict rule over a recipe log.
pub fn ground_truth_deps<M: Model>(model: &M, log: &[M::Recipe]) -> GroundTruthDeps {
    assert!(
        log.len() <= u32::MAX as usize,
        "recipe log too long for verification"
    );
    let mut pairs = Vec::new();
    for (j, later) in log.iter().enumerate() {
        for (i, earlier) in log[..j].iter().enumerate() {
            if model.conflicts(earlier, later) {
                pairs.push((i as u32, j as u32));
            }
        }
    }
    GroundTruthDeps::from_pairs(log.len() as u64, pairs)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// `later` started before `earlier` ended.
    Order {
        earlier: TaskId,
        later: TaskId,
        end_seq: u64,
        start_seq: u64,
    },
    Lifecycle {
        task: TaskId,
        message: String,
    },
    Creation {
        seq: u64,
        task: TaskId,
        message: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Order {
                earlier,
                later,
                end_seq,
                start_seq,
            } => write!(
                f,
                "order: task {later} started at seq {start_seq} before task {earlier} ended at seq {end_seq}"
            ),
            Violation::Lifecycle { task, message } => write!(f, "lifecycle: task {task}: {message}"),
            Violation::Creation { seq, task, message } => {
                write!(f, "creation: task {task} at seq {seq}: {message}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceCounts {
    pub events: u64,
    pub created: u64,
    pub exec_start: u64,
    pub exec_end: u64,
    pub erased: u64,
    pub skip_dependent: u64,
    pub skip_busy: u64,
    pub pairs_checked: u64,
    pub workers: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub counts: TraceCounts,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn order_violations(&self) -> usize {
        self.violations
            .iter()
            .filter(|v| matches!(v, Violation::Order { .. }))
            .count()
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        let c = &self.counts;
        writeln!(out, "events: {}", c.events)?;
        writeln!(out, "workers: {}", c.workers)?;
        writeln!(
            out,
            "created: {}  exec_start: {}  exec_end: {}  erased: {}",
            c.created, c.exec_start, c.exec_end, c.erased
        )?;
        writeln!(
            out,
            "skip_dependent: {}  skip_busy: {}",
            c.skip_dependent, c.skip_busy
        )?;
        writeln!(out, "dependence pairs checked: {}", c.pairs_checked)?;
        writeln!(out, "violations: {}", self.violations.len())?;
        for v in &self.violations {
            writeln!(out, "  {v}")?;
        }
        writeln!(
            out,
            "result: {}",
            if self.is_clean() { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Default, Clone, Copy)]
struct Lifecycle {
    created: Option<u64>,
    start: Option<u64>,
    end: Option<u64>,
    erased: Option<u64>,
}

/// Checks lifecycle invariants of every task and the ordering of every
/// dependent pair. The trace must come from a completed run.
pub fn validate_trace(trace: &[TraceEvent], deps: &GroundTruthDeps) -> ValidationReport {
    let mut violations = Vec::new();
    let mut counts = TraceCounts::default();
    let mut tasks: HashMap<TaskId, Lifecycle> = HashMap::new();

    let mut events: Vec<&TraceEvent> = trace.iter().collect();
    events.sort_by_key(|e| e.seq);
    let mut workers: Vec<u32> = events.iter().map(|e| e.worker_id).collect();
    workers.sort_unstable();
    workers.dedup();
    counts.workers = workers.len() as u64;

    let mut next_created: TaskId = 0;
    let mut last_seq = None;
    for e in &events {
        counts.events += 1;
        if last_seq == Some(e.seq) {
            violations.push(Violation::Lifecycle {
                task: e.task_id,
                message: format!("duplicate seq {}", e.seq),
            });
        }
        last_seq = Some(e.seq);

        let lc = tasks.entry(e.task_id).or_default();
        let mut once = |slot: &mut Option<u64>, what: &str| {
            if slot.is_some() {
                violations.push(Violation::Lifecycle {
                    task: e.task_id,
                    message: format!("second {what} at seq {}", e.seq),
                });
            } else {
                *slot = Some(e.seq);
            }
        };
        match e.kind {
            EventKind::Created => {
                counts.created += 1;
                once(&mut lc.created, "Created");
                if e.task_id != next_created {
                    violations.push(Violation::Creation {
                        seq: e.seq,
                        task: e.task_id,
                        message: format!("expected task {next_created} to be created next"),
                    });
                }
                next_created = next_created.max(e.task_id + 1);
            }
            EventKind::ExecStart => {
                counts.exec_start += 1;
                once(&mut lc.start, "ExecStart");
            }
            EventKind::ExecEnd => {
                counts.exec_end += 1;
                once(&mut lc.end, "ExecEnd");
            }
            EventKind::Erased => {
                counts.erased += 1;
                once(&mut lc.erased, "Erased");
            }
            EventKind::SkipDependent => counts.skip_dependent += 1,
            EventKind::SkipBusy => counts.skip_busy += 1,
        }
        if e.kind != EventKind::Created && lc.created.is_none() {
            violations.push(Violation::Lifecycle {
                task: e.task_id,
                message: format!("{} at seq {} before creation", e.kind, e.seq),
            });
        }
    }

    let mut ids: Vec<TaskId> = tasks.keys().copied().collect();
    ids.sort_unstable();
    for id in ids {
        let lc = tasks[&id];
        let steps = [
            ("Created", lc.created),
            ("ExecStart", lc.start),
            ("ExecEnd", lc.end),
            ("Erased", lc.erased),
        ];
        for (name, seq) in steps {
            if seq.is_none() {
                violations.push(Violation::Lifecycle {
                    task: id,
                    message: format!("missing {name}"),
                });
            }
        }
        for pair in steps.windows(2) {
            if let [(a, Some(sa)), (b, Some(sb))] = pair {
                if sa >= sb {
                    violations.push(Violation::Lifecycle {
                        task: id,
                        message: format!("{b} (seq {sb}) not after {a} (seq {sa})"),
                    });
                }
            }
        }
    }
    if counts.created != deps.tasks() {
        violations.push(Violation::Creation {
            seq: last_seq.unwrap_or(0),
            task: counts.created,
            message: format!(
                "trace created {} tasks, recipe log has {}",
                counts.created,
                deps.tasks()
            ),
        });
    }

    for (i, j) in deps.iter() {
        counts.pairs_checked += 1;
        let end = tasks.get(&i).and_then(|l| l.end);
        let start = tasks.get(&j).and_then(|l| l.start);
        if let (Some(end_seq), Some(start_seq)) = (end, start) {
            if end_seq >= start_seq {
                violations.push(Violation::Order {
                    earlier: i,
                    later: j,
                    end_seq,
                    start_seq,
                });
            }
        }
    }

    ValidationReport { violations, counts }
}

/// Fault injection: moves the `Created` and `ExecStart` events of `later`
/// to just before `ExecEnd` of `earlier`, then renumbers `seq` densely.
/// Applied to a sequential trace, this breaks exactly the pair
/// `(earlier, later)` and no lifecycle invariant, provided no task created
/// between the two is involved.
pub fn inject_reordering(trace: &mut Vec<TraceEvent>, earlier: TaskId, later: TaskId) {
    trace.sort_by_key(|e| e.seq);
    let find = |trace: &Vec<TraceEvent>, task, kind| {
        trace
            .iter()
            .position(|e| e.task_id == task && e.kind == kind)
            .unwrap_or_else(|| panic!("task {task} has no {kind} event"))
    };
    let mut moved = Vec::with_capacity(2);
    for kind in [EventKind::Created, EventKind::ExecStart] {
        let at = find(trace, later, kind);
        moved.push(trace.remove(at));
    }
    let at = find(trace, earlier, EventKind::ExecEnd);
    for (k, e) in moved.into_iter().enumerate() {
        trace.insert(at + k, e);
    }
    for (seq, e) in trace.iter_mut().enumerate() {
        e.seq = seq as u64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lifecycle(seq0: u64, task: TaskId) -> Vec<TraceEvent> {
        [
            EventKind::Created,
            EventKind::ExecStart,
            EventKind::ExecEnd,
            EventKind::Erased,
        ]
        .into_iter()
        .enumerate()
        .map(|(k, kind)| TraceEvent {
            seq: seq0 + k as u64,
            worker_id: 0,
            task_id: task,
            kind,
        })
        .collect()
    }

    fn sequential(n: u64) -> Vec<TraceEvent> {
        (0..n).flat_map(|t| lifecycle(4 * t, t)).collect()
    }

    #[test]
    fn sequential_trace_is_clean() {
        let deps = GroundTruthDeps::from_pairs(3, vec![(0, 1), (1, 2), (0, 2)]);
        let report = validate_trace(&sequential(3), &deps);
        assert!(report.is_clean(), "{:?}", report.violations);
        assert_eq!(report.counts.pairs_checked, 3);
        assert_eq!(report.counts.created, 3);
    }

    #[test]
    fn swapped_start_and_end_is_reported() {
        let deps = GroundTruthDeps::from_pairs(2, vec![(0, 1)]);
        let mut trace = sequential(2);
        // Task 1 starts (seq 5) before task 0 ends.
        trace[2].seq = 6;
        trace[5].seq = 2;
        let report = validate_trace(&trace, &deps);
        assert_eq!(report.order_violations(), 1);
        assert!(report.violations.contains(&Violation::Order {
            earlier: 0,
            later: 1,
            end_seq: 6,
            start_seq: 2
        }));
    }

    #[test]
    fn injection_breaks_exactly_one_pair() {
        let deps = GroundTruthDeps::from_pairs(4, vec![(0, 1), (1, 2), (2, 3), (0, 3)]);
        let mut trace = sequential(4);
        inject_reordering(&mut trace, 1, 2);
        let report = validate_trace(&trace, &deps);
        assert_eq!(report.violations.len(), 1, "{:?}", report.violations);
        assert_eq!(report.order_violations(), 1);
    }

    #[test]
    fn lifecycle_problems_are_reported() {
        let deps = GroundTruthDeps::from_pairs(2, vec![]);
        let mut trace = sequential(2);
        trace.retain(|e| !(e.task_id == 1 && e.kind == EventKind::Erased));
        trace.push(TraceEvent {
            seq: 100,
            worker_id: 1,
            task_id: 0,
            kind: EventKind::ExecStart,
        });
        let report = validate_trace(&trace, &deps);
        let text: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        assert!(
            text.iter().any(|t| t.contains("missing Erased")),
            "{text:?}"
        );
        assert!(
            text.iter().any(|t| t.contains("second ExecStart")),
            "{text:?}"
        );
    }

    #[test]
    fn out_of_order_creation_is_reported() {
        let deps = GroundTruthDeps::from_pairs(2, vec![]);
        let mut trace = sequential(2);
        trace[0].task_id = 1;
        trace[4].task_id = 0;
        let report = validate_trace(&trace, &deps);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Creation { .. })));
    }

    #[test]
    fn report_text() {
        let report = validate_trace(&sequential(1), &GroundTruthDeps::from_pairs(1, vec![]));
        let mut out = Vec::new();
        report.write_text(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("violations: 0"));
        assert!(text.ends_with("result: PASS\n"));
    }
}
