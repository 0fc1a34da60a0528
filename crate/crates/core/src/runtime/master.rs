use std::collections::BTreeMap;
use std::time::Instant;

use super::{ApplyEvent, GradMsg, RunConfig, RunError, RunHooks, RunTrace, TraceRow};
use crate::optimizer::{HyperParams, OptimError, OptimizerState};
use crate::problems::Problem;
use crate::staleness::{admit, Admission, ParamHistory, StalenessPolicy};
use crate::vectormath::DenseVec;

/// The single writer of optimizer state and iterate history, shared by every
/// execution mode.
pub(crate) struct Master<'a, P: Problem + ?Sized, H: RunHooks> {
    problem: &'a P,
    hp: HyperParams,
    policy: StalenessPolicy,
    pub state: OptimizerState,
    pub history: ParamHistory,
    hooks: &'a mut H,
    total: u64,
    objective_every: u64,
    clock: Option<Instant>,
    rows: Vec<TraceRow>,
    applied: u64,
    dropped: u64,
    histogram: BTreeMap<u64, u64>,
    initial_x: DenseVec,
    initial_objective: Option<f64>,
}

impl<'a, P: Problem + ?Sized, H: RunHooks> Master<'a, P, H> {
    pub fn new(
        problem: &'a P,
        hp: &HyperParams,
        cfg: &RunConfig,
        x0: DenseVec,
        capacity: usize,
        wallclock: bool,
        hooks: &'a mut H,
    ) -> Result<Self, RunError> {
        hp.validate()?;
        cfg.validate()?;
        if x0.len() != problem.dim() {
            return Err(OptimError::DimensionMismatch { expected: problem.dim(), got: x0.len() }.into());
        }
        if !x0.is_finite() {
            return Err(RunError::Config("initial point must be finite".into()));
        }
        let state = OptimizerState::new(x0.clone());
        hooks.on_start(&state)?;
        let initial_objective = if cfg.objective_every > 0 { Some(problem.full_value(&x0)?) } else { None };
        Ok(Master {
            problem,
            hp: *hp,
            policy: cfg.policy,
            history: ParamHistory::new(x0.clone(), capacity)?,
            state,
            hooks,
            total: cfg.iterations,
            objective_every: cfg.objective_every,
            clock: wallclock.then(Instant::now),
            rows: Vec::with_capacity(cfg.iterations.min(1 << 20) as usize),
            applied: 0,
            dropped: 0,
            histogram: BTreeMap::new(),
            initial_x: x0,
            initial_objective,
        })
    }

    pub fn received(&self) -> u64 {
        self.applied + self.dropped
    }

    pub fn done(&self) -> bool {
        self.received() >= self.total
    }

    /// Admits or drops one gradient; on admission applies a step and records
    /// the new iterate in the history.
    pub fn handle(&mut self, msg: GradMsg) -> Result<Admission, RunError> {
        let n = self.state.dim();
        if msg.g.len() != n || msg.read_meta.len() != n {
            return Err(RunError::Worker {
                worker: msg.worker_id,
                msg: format!(
                    "gradient of dimension {} with {} read versions for a {n}-dimensional problem",
                    msg.g.len(),
                    msg.read_meta.len()
                ),
            });
        }
        let current = self.history.current_version();
        if msg.read_meta.max_version() > current {
            return Err(RunError::Worker {
                worker: msg.worker_id,
                msg: format!("read version {} is ahead of the master ({current})", msg.read_meta.max_version()),
            });
        }
        let index = self.received() + 1;
        let admission = admit(&msg.read_meta, current, &self.policy);
        let alpha = self.hp.schedule.alpha_at(self.state.k)?;
        match admission {
            Admission::Accept { tau } => {
                let before = self.state.clone();
                let report = self.state.step(&self.hp, &msg.g, alpha, self.problem.bounds())?;
                self.hooks.on_apply(&ApplyEvent {
                    index,
                    tau,
                    alpha,
                    msg: &msg,
                    before: &before,
                    after: &self.state,
                    report: &report,
                    history: &self.history,
                })?;
                self.history.push(self.state.x.clone())?;
                self.applied += 1;
                *self.histogram.entry(tau).or_insert(0) += 1;
            }
            Admission::Drop { tau } => {
                self.hooks.on_drop(index, &msg, tau)?;
                self.dropped += 1;
            }
        }
        let due = self.objective_every > 0 && (index % self.objective_every == 0 || index == self.total);
        let objective = if due { Some(self.problem.full_value(&self.state.x)?) } else { None };
        let g = &msg.g;
        self.rows.push(TraceRow {
            k: index,
            alpha,
            tau: admission.tau(),
            dropped: !admission.accepted(),
            objective,
            grad_norm_sq: g.norm_sq(),
            grad_inf: g.norm_inf(),
            grad_l1: g.norm_l1(),
            grad_nnz: g.nnz(),
            worker: msg.worker_id,
            wallclock_ns: self.clock.map_or(0, |c| c.elapsed().as_nanos() as u64),
        });
        Ok(admission)
    }

    pub fn finish(self, produced: u64, unconsumed: u64, transport_drops: u64, meta: Vec<(String, String)>) -> RunTrace {
        RunTrace {
            meta,
            rows: self.rows,
            initial_x: self.initial_x,
            initial_objective: self.initial_objective,
            final_state: self.state,
            produced,
            applied: self.applied,
            dropped: self.dropped,
            unconsumed,
            transport_drops,
            tau_histogram: self.histogram,
            elapsed: self.clock.map_or(Default::default(), |c| c.elapsed()),
        }
    }
}

/// Metadata lines common to every mode.
pub(crate) fn base_meta(cfg: &RunConfig, hp: &HyperParams, n: usize) -> Vec<(String, String)> {
    vec![
        ("mode".into(), cfg.mode.name().into()),
        ("workers".into(), cfg.workers.to_string()),
        ("batch_size".into(), cfg.batch_size.to_string()),
        ("iterations".into(), cfg.iterations.to_string()),
        ("tau_max".into(), cfg.policy.tau_max.to_string()),
        ("seed".into(), cfg.master_seed.to_string()),
        ("dim".into(), n.to_string()),
        ("beta1".into(), hp.beta1.to_string()),
        ("beta2".into(), hp.beta2.to_string()),
        ("eps".into(), hp.eps.to_string()),
        ("schedule".into(), format!("{:?}", hp.schedule)),
    ]
}
