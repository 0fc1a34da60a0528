use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use crossbeam_channel::{bounded, Sender};
use log::{debug, warn};

use super::master::{base_meta, Master};
use super::{history_capacity, GradMsg, Mode, RunConfig, RunError, RunHooks, RunTrace, SharedParams};
use crate::optimizer::HyperParams;
use crate::problems::Problem;
use crate::rng::batch_seed;
use crate::staleness::{ReadMeta, ReadMode};
use crate::vectormath::DenseVec;

type WorkerResult = Result<GradMsg, (u32, String)>;

struct WorkerCtx<'a, P: ?Sized> {
    id: u32,
    problem: &'a P,
    shared: &'a SharedParams,
    stop: &'a AtomicBool,
    produced: &'a AtomicU64,
    cfg: &'a RunConfig,
}

fn consistent_read(shared: &SharedParams) -> (DenseVec, ReadMeta) {
    loop {
        let (x, meta) = shared.read();
        if meta.is_consistent() {
            return (x, meta);
        }
        std::hint::spin_loop();
    }
}

fn worker_loop<P: Problem + ?Sized>(ctx: &WorkerCtx<'_, P>, tx: &Sender<WorkerResult>) -> Result<(), String> {
    let mut counter = 0u64;
    while !ctx.stop.load(Ordering::Acquire) {
        let (xhat, meta) = match ctx.cfg.policy.mode {
            ReadMode::Inconsistent => ctx.shared.read(),
            ReadMode::Consistent => consistent_read(ctx.shared),
        };
        let seed = batch_seed(ctx.cfg.master_seed, ctx.id, counter);
        counter += 1;
        let g = ctx.problem.minibatch_grad(&xhat, ctx.cfg.batch_size, seed).map_err(|e| e.to_string())?;
        let msg = GradMsg { g, read_meta: meta, worker_id: ctx.id, batch_seed: seed };
        if tx.send(Ok(msg)).is_err() {
            break;
        }
        ctx.produced.fetch_add(1, Ordering::AcqRel);
    }
    Ok(())
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".into()
    }
}

/// Shared-memory run: the calling thread is the master and `cfg.workers`
/// scoped threads produce gradients from lock-free reads of the parameters.
/// The gradient queue is bounded, so a full queue blocks workers. A worker
/// error or panic aborts the run.
pub fn run_threads<P: Problem + ?Sized, H: RunHooks>(
    problem: &P,
    hp: &HyperParams,
    cfg: &RunConfig,
    x0: DenseVec,
    hooks: &mut H,
) -> Result<RunTrace, RunError> {
    if cfg.mode != Mode::Threads {
        return Err(RunError::Config(format!("run_threads called with mode {}", cfg.mode.name())));
    }
    cfg.validate()?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    if cores < 2 {
        warn!("thread mode on {cores} hardware thread(s): workers will time-share");
    }
    let n = problem.dim();
    let shared = SharedParams::new(&x0);
    let mut master = Master::new(problem, hp, cfg, x0, history_capacity(&cfg.policy, 0), true, hooks)?;
    let stop = AtomicBool::new(false);
    let produced = AtomicU64::new(0);
    let (tx, rx) = bounded::<WorkerResult>(cfg.queue_capacity());

    let (outcome, unconsumed) = std::thread::scope(|s| {
        for w in 0..cfg.workers as u32 {
            let tx = tx.clone();
            let ctx = WorkerCtx { id: w, problem, shared: &shared, stop: &stop, produced: &produced, cfg };
            s.spawn(move || {
                let res = catch_unwind(AssertUnwindSafe(|| worker_loop(&ctx, &tx)));
                let err = match res {
                    Ok(Ok(())) => return,
                    Ok(Err(e)) => e,
                    Err(p) => format!("panicked: {}", panic_message(p)),
                };
                ctx.stop.store(true, Ordering::Release);
                let _ = tx.send(Err((w, err)));
            });
        }
        drop(tx);

        let mut outcome = Ok(());
        while !master.done() {
            match rx.recv() {
                Ok(Ok(msg)) => match master.handle(msg) {
                    Ok(adm) => {
                        if adm.accepted() {
                            shared.publish(&master.state.x, master.history.current_version());
                        }
                    }
                    Err(e) => {
                        outcome = Err(e);
                        break;
                    }
                },
                Ok(Err((worker, msg))) => {
                    outcome = Err(RunError::Worker { worker, msg });
                    break;
                }
                Err(_) => {
                    outcome = Err(RunError::Worker {
                        worker: u32::MAX,
                        msg: "all workers exited before the run finished".into(),
                    });
                    break;
                }
            }
        }
        stop.store(true, Ordering::Release);
        let mut unconsumed = 0u64;
        for item in rx.iter() {
            match item {
                Ok(_) => unconsumed += 1,
                Err((worker, msg)) => {
                    if outcome.is_ok() {
                        debug!("worker {worker} failed after the run finished: {msg}");
                    }
                }
            }
        }
        (outcome, unconsumed)
    });
    outcome?;

    let mut meta = base_meta(cfg, hp, n);
    meta.push(("read_mode".into(), format!("{:?}", cfg.policy.mode)));
    meta.push(("hardware_threads".into(), cores.to_string()));
    let mut trace = master.finish(produced.load(Ordering::Acquire), unconsumed, 0, meta);
    let throughput = trace.throughput();
    trace.push_meta("throughput_per_s", format!("{throughput:.1}"));
    Ok(trace)
}
