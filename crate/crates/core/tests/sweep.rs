use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

use modalbench::algorithms::AlgorithmKind;
use modalbench::data::{synthesize, SyntheticSpec};
use modalbench::selection::{select, SelectionMethod, TrialRecord};
use modalbench::sweep::{
    aggregate_report, run_sweep, run_sweep_with, run_trial, Job, ResultsStore, RunPlan, StopFlags, StoreContents, SweepContext,
};

fn context(loo: bool) -> SweepContext {
    let spec = SyntheticSpec {
        dim: 8,
        num_classes: 3,
        num_instances: 120,
        invariant_dim: 4,
        spurious_dim: 2,
        ..SyntheticSpec::default()
    };
    let dataset = synthesize(&spec, 5).unwrap();
    let mut plan = RunPlan::new("synthetic", "m2");
    plan.algorithms = vec![AlgorithmKind::Concat, AlgorithmKind::Erm];
    plan.trials = 2;
    plan.seeds = 2;
    plan.steps = Some(12);
    plan.loo = loo;
    SweepContext::new(plan, dataset).unwrap()
}

fn no_op(_: &TrialRecord) {}

fn sorted_lines(c: &StoreContents) -> Vec<String> {
    let mut v: Vec<String> = c
        .trials
        .iter()
        .map(|r| serde_json::to_string(r).unwrap())
        .chain(c.subruns.iter().map(|r| serde_json::to_string(r).unwrap()))
        .chain(c.metrics.iter().map(|r| serde_json::to_string(r).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn record_counts_and_worker_count_invariance() {
    let ctx = context(true);
    let dir = tempfile::tempdir().unwrap();
    let one = ResultsStore::open(&dir.path().join("one.jsonl")).unwrap();
    let three = ResultsStore::open(&dir.path().join("three.jsonl")).unwrap();
    let s1 = run_sweep(&ctx, &one, 1, None, &no_op).unwrap();
    let s3 = run_sweep(&ctx, &three, 3, None, &no_op).unwrap();
    assert_eq!(s1, s3);
    assert_eq!((s1.total, s1.ok, s1.failed, s1.skipped), (8, 8, 0, 0));

    let a = one.contents().unwrap();
    let b = three.contents().unwrap();
    assert_eq!(a.trials.len(), 2 * 2 * 2);
    assert_eq!(a.subruns.len(), 2 * 2 * 2 * 2);
    assert_eq!(sorted_lines(&a), sorted_lines(&b));
    for r in &a.trials {
        assert!(r.is_ok(), "{:?}", r.error);
        assert_eq!(r.accuracies.loo.len(), 2);
        assert!(r.accuracies.test.is_some() && r.accuracies.test_val.is_some());
    }
}

#[test]
fn a_trial_reruns_byte_identically() {
    let ctx = context(true);
    let job = Job {
        algorithm: AlgorithmKind::Erm,
        trial: 1,
        seed_index: 1,
    };
    let a = run_trial(&ctx, &job, None).unwrap();
    let b = run_trial(&ctx, &job, None).unwrap();
    assert_eq!(serde_json::to_string(&a.trial).unwrap(), serde_json::to_string(&b.trial).unwrap());
    assert_eq!(a, b);
}

#[test]
fn panicking_job_becomes_a_failed_record() {
    let ctx = context(false);
    let dir = tempfile::tempdir().unwrap();
    let store = ResultsStore::open(&dir.path().join("r.jsonl")).unwrap();
    let runner = |ctx: &SweepContext, job: &Job, cancel: Option<&AtomicBool>| {
        if job.trial == 0 && job.algorithm == AlgorithmKind::Erm {
            panic!("boom");
        }
        run_trial(ctx, job, cancel)
    };
    let s = run_sweep_with(&ctx, &store, 2, None, &no_op, &runner).unwrap();
    assert_eq!((s.ok, s.failed), (6, 2));
    let failed: Vec<TrialRecord> = store.contents().unwrap().trials.into_iter().filter(|r| !r.is_ok()).collect();
    assert_eq!(failed.len(), 2);
    assert!(failed.iter().all(|r| r.error.as_deref() == Some("panic: boom")));
    // Failed trials are never selected.
    let erm: Vec<TrialRecord> = store
        .contents()
        .unwrap()
        .trials
        .into_iter()
        .filter(|r| r.provenance.algorithm == AlgorithmKind::Erm)
        .collect();
    let chosen = select(SelectionMethod::Tm, &erm, &ctx.training_names()).unwrap();
    assert!(chosen.iter().all(|c| c.trial == 1));
}

#[test]
fn oracle_validation_score_dominates_training_modality_choice() {
    let ctx = context(false);
    let dir = tempfile::tempdir().unwrap();
    let store = ResultsStore::open(&dir.path().join("r.jsonl")).unwrap();
    run_sweep(&ctx, &store, 1, None, &no_op).unwrap();
    let contents = store.contents().unwrap();
    for kind in [AlgorithmKind::Concat, AlgorithmKind::Erm] {
        let recs: Vec<TrialRecord> =
            contents.trials.iter().filter(|r| r.provenance.algorithm == kind).cloned().collect();
        let by_key: BTreeMap<(usize, usize), &TrialRecord> =
            recs.iter().map(|r| ((r.provenance.seed_index, r.provenance.trial), r)).collect();
        let tm = select(SelectionMethod::Tm, &recs, &ctx.training_names()).unwrap();
        let oracle = select(SelectionMethod::Oracle, &recs, &ctx.training_names()).unwrap();
        for (t, o) in tm.iter().zip(&oracle) {
            assert_eq!(t.seed_index, o.seed_index);
            let tm_val = by_key[&(t.seed_index, t.trial)].accuracies.test_val.unwrap();
            let or_val = by_key[&(o.seed_index, o.trial)].accuracies.test_val.unwrap();
            assert!(or_val >= tm_val);
        }
    }
    let report = aggregate_report(&contents).unwrap();
    assert_eq!(report.tables.len(), 2, "loo table absent without sub-runs");
}

#[test]
fn resume_skips_completed_jobs() {
    let ctx = context(false);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    let flags = StopFlags::default();
    let first = {
        let store = ResultsStore::open(&path).unwrap();
        let drain = |_: &TrialRecord| flags.drain.store(true, Ordering::Relaxed);
        run_sweep(&ctx, &store, 1, Some(&flags), &drain).unwrap()
    };
    assert_eq!((first.ok, first.cancelled), (1, 7));

    let store = ResultsStore::open(&path).unwrap();
    let second = run_sweep(&ctx, &store, 2, None, &no_op).unwrap();
    assert_eq!((second.skipped, second.ok, second.cancelled), (1, 7, 0));
    let third = run_sweep(&ctx, &store, 2, None, &no_op).unwrap();
    assert_eq!((third.skipped, third.ok), (8, 0));
    assert_eq!(store.contents().unwrap().trials.len(), 8);
}
