//! Master-worker execution in three modes.
//!
//! * [`run_sim`]: single-threaded and bit-reproducible; the delay model picks
//!   how stale each worker's snapshot is.
//! * [`run_threads`]: one master thread and `W` worker threads reading a
//!   lock-free shared parameter vector.
//! * [`run_wire`]: the master and workers exchange [`WireFrame`]s over an
//!   in-process loopback or TCP on localhost.
//!
//! Every mode feeds the same master loop: receive a [`GradMsg`], compute its
//! staleness, drop it if `τ > tau_max`, otherwise apply one optimizer step.
//! `K` (`RunConfig::iterations`) counts gradients received by the master,
//! applied or dropped.

mod master;
mod shared;
mod sim;
mod threads;
mod trace;
mod transport;
pub mod wire;

use thiserror::Error;

use crate::optimizer::{OptimError, OptimizerState, StepReport};
use crate::problems::{Problem, ProblemError};
use crate::staleness::{ParamHistory, ReadMeta, StalenessError, StalenessPolicy};
use crate::vectormath::DenseVec;
use crate::HyperParams;

pub use shared::SharedParams;
pub use sim::run_sim;
pub use threads::run_threads;
pub use trace::{parse_trace_rows, RunTrace, TraceRow, TRACE_HEADER};
pub use transport::run_wire;
pub use wire::{decode_frame, encode_frame, FrameType, WireError, WireFrame};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Staleness(#[from] StalenessError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("worker {worker} failed: {msg}")]
    Worker { worker: u32, msg: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("hook failed: {0}")]
    Hook(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sim,
    Threads,
    Wire,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Sim => "sim",
            Mode::Threads => "threads",
            Mode::Wire => "wire",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(Mode::Sim),
            "threads" => Ok(Mode::Threads),
            "wire" => Ok(Mode::Wire),
            _ => Err(format!("unknown mode {s:?} (expected sim, threads or wire)")),
        }
    }
}

/// Staleness injected by [`run_sim`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DelayModel {
    /// Every snapshot is exactly `τ` versions old.
    Fixed(u64),
    /// Delay drawn uniformly from `0..=τ` per gradient.
    UniformInt(u64),
    /// Worker `w` always reads `delays[w]` versions back.
    PerWorkerFixed(Vec<u64>),
}

impl DelayModel {
    pub fn max_delay(&self) -> u64 {
        match self {
            DelayModel::Fixed(t) | DelayModel::UniformInt(t) => *t,
            DelayModel::PerWorkerFixed(d) => d.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    /// Deterministic in-process links. Parameter frames take `param_latency`
    /// ticks to reach a worker and gradient frames `grad_latency` ticks to
    /// reach the master.
    Loopback { param_latency: u64, grad_latency: u64 },
    /// TCP streams on 127.0.0.1 with one thread per worker.
    Tcp,
}

impl Default for Transport {
    fn default() -> Self {
        Transport::Loopback { param_latency: 0, grad_latency: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub workers: usize,
    pub batch_size: usize,
    /// Gradients the master receives before stopping.
    pub iterations: u64,
    pub policy: StalenessPolicy,
    pub delay_model: DelayModel,
    pub master_seed: u64,
    /// Evaluate the full objective every this many rows (0 = never); the last
    /// row always carries it when non-zero.
    pub objective_every: u64,
    pub transport: Transport,
    /// Bound on queued gradients in thread mode; `None` means `4 * workers`.
    pub queue_capacity: Option<usize>,
}

impl RunConfig {
    pub fn sim(
        iterations: u64,
        batch_size: usize,
        policy: StalenessPolicy,
        delay_model: DelayModel,
        seed: u64,
    ) -> Self {
        RunConfig {
            mode: Mode::Sim,
            workers: 1,
            batch_size,
            iterations,
            policy,
            delay_model,
            master_seed: seed,
            objective_every: 0,
            transport: Transport::default(),
            queue_capacity: None,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.workers == 0 {
            return Err(RunError::Config("workers must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(RunError::Config("batch size must be positive".into()));
        }
        if self.workers > u32::MAX as usize {
            return Err(RunError::Config("too many workers".into()));
        }
        if let DelayModel::PerWorkerFixed(d) = &self.delay_model {
            if d.len() != self.workers {
                return Err(RunError::Config(format!(
                    "per-worker delays list has {} entries for {} workers",
                    d.len(),
                    self.workers
                )));
            }
        }
        if self.queue_capacity == Some(0) {
            return Err(RunError::Config("queue capacity must be positive".into()));
        }
        Ok(())
    }

    pub fn queue_capacity(&self) -> usize {
        self.queue_capacity.unwrap_or(4 * self.workers)
    }
}

/// A stochastic gradient and the versions of the parameters it was computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMsg {
    pub g: DenseVec,
    pub read_meta: ReadMeta,
    pub worker_id: u32,
    pub batch_seed: u64,
}

/// Everything known about one applied update. `history` has not yet received
/// the new iterate, so its current version holds `before.x`.
pub struct ApplyEvent<'a> {
    /// 1-based index of the received gradient.
    pub index: u64,
    pub tau: u64,
    pub alpha: f64,
    pub msg: &'a GradMsg,
    pub before: &'a OptimizerState,
    pub after: &'a OptimizerState,
    pub report: &'a StepReport,
    pub history: &'a ParamHistory,
}

/// Callbacks invoked synchronously on the master's execution context.
pub trait RunHooks {
    fn on_start(&mut self, _state: &OptimizerState) -> Result<(), RunError> {
        Ok(())
    }

    fn on_apply(&mut self, _ev: &ApplyEvent<'_>) -> Result<(), RunError> {
        Ok(())
    }

    fn on_drop(&mut self, _index: u64, _msg: &GradMsg, _tau: u64) -> Result<(), RunError> {
        Ok(())
    }
}

impl RunHooks for () {}

impl<H: RunHooks + ?Sized> RunHooks for &mut H {
    fn on_start(&mut self, state: &OptimizerState) -> Result<(), RunError> {
        (**self).on_start(state)
    }

    fn on_apply(&mut self, ev: &ApplyEvent<'_>) -> Result<(), RunError> {
        (**self).on_apply(ev)
    }

    fn on_drop(&mut self, index: u64, msg: &GradMsg, tau: u64) -> Result<(), RunError> {
        (**self).on_drop(index, msg, tau)
    }
}

/// Runs several hooks in order.
impl<A: RunHooks, B: RunHooks> RunHooks for (A, B) {
    fn on_start(&mut self, state: &OptimizerState) -> Result<(), RunError> {
        self.0.on_start(state)?;
        self.1.on_start(state)
    }

    fn on_apply(&mut self, ev: &ApplyEvent<'_>) -> Result<(), RunError> {
        self.0.on_apply(ev)?;
        self.1.on_apply(ev)
    }

    fn on_drop(&mut self, index: u64, msg: &GradMsg, tau: u64) -> Result<(), RunError> {
        self.0.on_drop(index, msg, tau)?;
        self.1.on_drop(index, msg, tau)
    }
}

/// Collects every iterate `x^(1), x^(2), …` of a run.
#[derive(Debug, Default, Clone)]
pub struct IterateRecorder {
    pub iterates: Vec<DenseVec>,
}

impl RunHooks for IterateRecorder {
    fn on_start(&mut self, state: &OptimizerState) -> Result<(), RunError> {
        self.iterates.clear();
        self.iterates.push(state.x.clone());
        Ok(())
    }

    fn on_apply(&mut self, ev: &ApplyEvent<'_>) -> Result<(), RunError> {
        self.iterates.push(ev.after.x.clone());
        Ok(())
    }
}

/// Dispatches on `cfg.mode`.
pub fn run<P: Problem + ?Sized, H: RunHooks>(
    problem: &P,
    hp: &HyperParams,
    cfg: &RunConfig,
    x0: DenseVec,
    hooks: &mut H,
) -> Result<RunTrace, RunError> {
    match cfg.mode {
        Mode::Sim => run_sim(problem, hp, cfg, x0, hooks),
        Mode::Threads => run_threads(problem, hp, cfg, x0, hooks),
        Mode::Wire => run_wire(problem, hp, cfg, x0, hooks),
    }
}

/// History ring large enough for every admissible read and for the delays a
/// run will inject.
pub(crate) fn history_capacity(policy: &StalenessPolicy, extra_delay: u64) -> usize {
    policy.tau_max.max(extra_delay) as usize + 2
}
