use rand::Rng;

use super::master::{base_meta, Master};
use super::{history_capacity, DelayModel, GradMsg, Mode, RunConfig, RunError, RunHooks, RunTrace};
use crate::optimizer::HyperParams;
use crate::problems::Problem;
use crate::rng::{batch_seed, derive_seed, rng_from};
use crate::staleness::ReadMode;
use crate::vectormath::DenseVec;

const DELAY_STREAM: u64 = 0xde1a7;

/// Deterministic simulation. Gradient `j` comes from worker `j mod W`, which
/// read the parameters `d` versions before the master's current iterate, with
/// `d` chosen by the delay model. In inconsistent-read mode each coordinate
/// gets its own delay in `0..=d`, and one random coordinate is pinned to `d`
/// so that the staleness of the read is exactly `d`.
///
/// Before the first update the history holds copies of `x0` at non-positive
/// versions, so early reads see `x0` but are still charged their full delay.
pub fn run_sim<P: Problem + ?Sized, H: RunHooks>(
    problem: &P,
    hp: &HyperParams,
    cfg: &RunConfig,
    x0: DenseVec,
    hooks: &mut H,
) -> Result<RunTrace, RunError> {
    if cfg.mode != Mode::Sim {
        return Err(RunError::Config(format!("run_sim called with mode {}", cfg.mode.name())));
    }
    let n = problem.dim();
    let capacity = history_capacity(&cfg.policy, cfg.delay_model.max_delay());
    let mut master = Master::new(problem, hp, cfg, x0, capacity, false, hooks)?;
    let mut rng = rng_from(derive_seed(cfg.master_seed, DELAY_STREAM));
    let mut counters = vec![0u64; cfg.workers];
    let mut coord_delays = vec![0u64; n];

    for j in 0..cfg.iterations {
        let w = (j % cfg.workers as u64) as usize;
        let d = match &cfg.delay_model {
            DelayModel::Fixed(t) => *t,
            DelayModel::UniformInt(t) => rng.random_range(0..=*t),
            DelayModel::PerWorkerFixed(list) => list[w],
        };
        let (xhat, meta) = match cfg.policy.mode {
            ReadMode::Consistent => master.history.snapshot_consistent(d)?,
            ReadMode::Inconsistent => {
                for c in coord_delays.iter_mut() {
                    *c = rng.random_range(0..=d);
                }
                if n > 0 {
                    coord_delays[rng.random_range(0..n)] = d;
                }
                master.history.snapshot_inconsistent(&coord_delays)?
            }
        };
        let seed = batch_seed(cfg.master_seed, w as u32, counters[w]);
        counters[w] += 1;
        let g = problem.minibatch_grad(&xhat, cfg.batch_size, seed)?;
        master.handle(GradMsg { g, read_meta: meta, worker_id: w as u32, batch_seed: seed })?;
    }

    let mut meta = base_meta(cfg, hp, n);
    meta.push(("delay_model".into(), format!("{:?}", cfg.delay_model)));
    meta.push(("read_mode".into(), format!("{:?}", cfg.policy.mode)));
    Ok(master.finish(cfg.iterations, 0, 0, meta))
}
