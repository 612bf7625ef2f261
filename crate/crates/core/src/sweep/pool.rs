use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use super::plan::{Job, SweepContext};
use super::run::{failed_trial, run_trial, TrialOutput};
use super::store::ResultsStore;
use crate::error::{Error, Result};
use crate::selection::TrialRecord;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SweepSummary {
    pub total: usize,
    /// Jobs whose trial record was already in the store.
    pub skipped: usize,
    pub ok: usize,
    pub failed: usize,
    /// Jobs not started, or abandoned, because of cancellation.
    pub cancelled: usize,
}

/// Cancellation signals shared with a running sweep.
#[derive(Debug, Default)]
pub struct StopFlags {
    /// No new job starts; running jobs finish and are written.
    pub drain: AtomicBool,
    /// Running jobs stop at their next step and are not written.
    pub abort: AtomicBool,
}

impl StopFlags {
    fn stopping(&self) -> bool {
        self.drain.load(Ordering::Relaxed) || self.abort.load(Ordering::Relaxed)
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "non-string panic payload".into())
}

/// Runs every job of `ctx` not yet recorded in `store` on `workers` threads.
///
/// Jobs are independent and deterministic, so the set of appended records does not
/// depend on `workers` or on scheduling. A panicking job is recorded as failed. The
/// store only ever receives whole jobs, whatever `stop` requests.
pub fn run_sweep(
    ctx: &SweepContext,
    store: &ResultsStore,
    workers: usize,
    stop: Option<&StopFlags>,
    on_trial: &(dyn Fn(&TrialRecord) + Sync),
) -> Result<SweepSummary> {
    run_sweep_with(ctx, store, workers, stop, on_trial, &run_trial)
}

/// Job runner signature accepted by [`run_sweep_with`]; the flag is the abort signal.
pub type JobRunner = dyn Fn(&SweepContext, &Job, Option<&AtomicBool>) -> Result<TrialOutput> + Sync;

/// [`run_sweep`] with a caller-supplied job runner.
pub fn run_sweep_with(
    ctx: &SweepContext,
    store: &ResultsStore,
    workers: usize,
    stop: Option<&StopFlags>,
    on_trial: &(dyn Fn(&TrialRecord) + Sync),
    runner: &JobRunner,
) -> Result<SweepSummary> {
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    let done: BTreeSet<_> = store
        .contents()?
        .trials_for_plan(&ctx.plan_hash)
        .map(|r| (r.provenance.algorithm, r.provenance.trial, r.provenance.seed_index))
        .collect();
    let all = ctx.jobs();
    let pending: Vec<Job> = all
        .iter()
        .copied()
        .filter(|j| !done.contains(&(j.algorithm, j.trial, j.seed_index)))
        .collect();
    let summary = Mutex::new(SweepSummary {
        total: all.len(),
        skipped: all.len() - pending.len(),
        ..SweepSummary::default()
    });
    let next = AtomicUsize::new(0);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    let halt = AtomicBool::new(false);

    let abort = stop.map(|s| &s.abort);
    let worker = || loop {
        if halt.load(Ordering::Relaxed) || stop.is_some_and(StopFlags::stopping) {
            return;
        }
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(job) = pending.get(i) else { return };
        let out = catch_unwind(AssertUnwindSafe(|| runner(ctx, job, abort)));
        let out = match out {
            Ok(Ok(out)) => out,
            Ok(Err(_)) if abort.is_some_and(|a| a.load(Ordering::Relaxed)) => return,
            Ok(Err(e)) => TrialOutput {
                subruns: Vec::new(),
                metrics: Vec::new(),
                trial: failed_trial(ctx.provenance(job), &ctx.config(job), format!("{}: {e}", e.code())),
            },
            Err(payload) => TrialOutput {
                subruns: Vec::new(),
                metrics: Vec::new(),
                trial: failed_trial(
                    ctx.provenance(job),
                    &ctx.config(job),
                    format!("panic: {}", panic_message(payload.as_ref())),
                ),
            },
        };
        if let Err(e) = store.append_output(&out) {
            first_error.lock().unwrap_or_else(|p| p.into_inner()).get_or_insert(e);
            halt.store(true, Ordering::Relaxed);
            return;
        }
        {
            let mut s = summary.lock().unwrap_or_else(|p| p.into_inner());
            if out.trial.is_ok() {
                s.ok += 1;
            } else {
                s.failed += 1;
            }
        }
        on_trial(&out.trial);
    };

    std::thread::scope(|scope| {
        for _ in 0..workers.min(pending.len().max(1)) {
            scope.spawn(worker);
        }
    });
    if let Some(e) = first_error.into_inner().unwrap_or_else(|p| p.into_inner()) {
        return Err(e);
    }
    let mut s = summary.into_inner().unwrap_or_else(|p| p.into_inner());
    s.cancelled = s.total - s.skipped - s.ok - s.failed;
    Ok(s)
}
