use taskchain::cultural::{CulturalModel, CulturalParams};
use taskchain::sir::{SirModel, SirParams, SirState};
use taskchain::verify::{ground_truth_deps, inject_reordering, run_sequential, validate_trace};
use taskchain::{run, EngineConfig, EventKind, Model};

fn cultural(seed: u64) -> CulturalModel {
    CulturalModel::new(
        CulturalParams {
            agents: 60,
            features: 10,
            traits: 3,
            omega_gate: 0.0,
            steps: 4000,
        },
        seed,
    )
    .unwrap()
}

fn sir(seed: u64) -> SirModel {
    SirModel::from_state(
        SirState::new(
            SirParams {
                steps: 40,
                ..SirParams::desk_scale(20)
            },
            seed,
        )
        .unwrap(),
    )
    .unwrap()
}

fn check_model<M: Model>(make: impl Fn(u64) -> M) {
    for seed in [1u64, 2] {
        let reference = make(seed);
        let seq = run_sequential(&reference, seed);
        let deps = ground_truth_deps(&reference, &seq.log);
        assert!(!deps.is_empty());
        for n in 1..=4 {
            for cap in [1, 6] {
                let model = make(seed);
                let config = EngineConfig::new(n, seed)
                    .with_cycle_cap(cap)
                    .with_trace(true);
                let out = run(&model, &config).unwrap();
                assert_eq!(out.digest, seq.digest, "seed={seed} n={n} C={cap}");
                assert_eq!(out.tasks, seq.log.len() as u64);
                let report = validate_trace(&out.trace, &deps);
                assert!(
                    report.is_clean(),
                    "seed={seed} n={n} C={cap}: {:?}",
                    &report.violations[..1]
                );
                assert_eq!(report.counts.exec_start, seq.log.len() as u64);
            }
        }
    }
}

#[test]
fn cultural_engine_matches_sequential() {
    check_model(cultural);
}

#[test]
fn sir_engine_matches_sequential() {
    check_model(sir);
}

#[test]
fn single_worker_trace_is_sequential() {
    let model = cultural(4);
    let out = run(&model, &EngineConfig::new(1, 4).with_trace(true)).unwrap();
    let starts: Vec<u64> = out
        .trace
        .iter()
        .filter(|e| e.kind == EventKind::ExecStart)
        .map(|e| e.task_id)
        .collect();
    assert_eq!(starts, (0..4000).collect::<Vec<_>>());
    assert!(out.trace.iter().all(|e| e.kind != EventKind::SkipBusy));
}

#[test]
fn created_order_matches_recipe_log() {
    let reference = cultural(9);
    let seq = run_sequential(&reference, 9);
    let model = cultural(9);
    let out = run(&model, &EngineConfig::new(3, 9).with_trace(true)).unwrap();
    let created: Vec<u64> = out
        .trace
        .iter()
        .filter(|e| e.kind == EventKind::Created)
        .map(|e| e.task_id)
        .collect();
    assert_eq!(created, (0..seq.log.len() as u64).collect::<Vec<_>>());
}

#[test]
fn oracle_is_self_consistent() {
    let a = run_sequential(&cultural(3), 3);
    let b = run_sequential(&cultural(3), 3);
    assert_eq!(a.digest, b.digest);
    assert_eq!(a.log, b.log);
    let empty = CulturalModel::new(
        CulturalParams {
            steps: 0,
            ..cultural(3).params().clone()
        },
        3,
    )
    .unwrap();
    let initial = empty.state_digest();
    assert_eq!(run_sequential(&empty, 3).digest, initial);
}

#[test]
fn injected_reorderings_are_detected() {
    let model = cultural(5);
    let out = run(&model, &EngineConfig::new(1, 5).with_trace(true)).unwrap();
    let reference = cultural(5);
    let seq = run_sequential(&reference, 5);
    let deps = ground_truth_deps(&reference, &seq.log);
    let mut trace = out.trace.clone();
    let mut injected = 0;
    let mut last = 0;
    for j in 1..seq.log.len() as u64 {
        if injected == 3 {
            break;
        }
        if j > last + 2 && deps.contains(j - 1, j) {
            inject_reordering(&mut trace, j - 1, j);
            injected += 1;
            last = j;
        }
    }
    assert_eq!(injected, 3);
    assert_eq!(validate_trace(&trace, &deps).violations.len(), 3);
}

#[test]
fn watchdog_aborts_stuck_runs() {
    use std::time::Duration;
    use taskchain::Error;

    /// Every execution sleeps; the watchdog fires long before the end.
    struct Slow;
    impl Model for Slow {
        type Recipe = u64;
        type Record = ();
        type Creator = u64;
        fn creator(&self, _: u64) -> u64 {
            0
        }
        fn create(&self, c: &mut u64) -> Option<u64> {
            *c += 1;
            (*c <= 1000).then_some(*c)
        }
        fn new_record(&self) {}
        fn depends(&self, _: &(), _: &u64) -> bool {
            false
        }
        fn absorb(&self, _: &mut (), _: &u64) {}
        fn reset(&self, _: &mut ()) {}
        fn execute(&self, _: &u64) {
            std::thread::sleep(Duration::from_millis(5));
        }
        fn state_digest(&self) -> u64 {
            0
        }
        fn conflicts(&self, _: &u64, _: &u64) -> bool {
            false
        }
    }

    let config = EngineConfig::new(2, 0)
        .with_trace(true)
        .with_watchdog(Some(Duration::from_millis(100)));
    match run(&Slow, &config) {
        Err(Error::Watchdog { partial_trace, .. }) => assert!(!partial_trace.is_empty()),
        other => panic!("expected watchdog, got {:?}", other.map(|o| o.tasks)),
    }
}
