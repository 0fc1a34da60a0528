//! Asynchronous-parallel AMSGrad (APAM).
//!
//! A single master owns the optimizer state `(x, m, v, v̂)` and applies
//! possibly stale mini-batch gradients produced by workers. The crate provides
//! the update rule, a problem suite, staleness bookkeeping, three execution
//! modes (deterministic simulation, shared-memory threads and a framed
//! message protocol) and instrumentation that evaluates convergence bounds and
//! audits per-step inequalities on recorded runs.

pub mod metrics;
pub mod optimizer;
pub mod problems;
pub mod rng;
pub mod runtime;
pub mod staleness;
pub mod vectormath;

pub use optimizer::{run_serial, HyperParams, LrSchedule, OptimError, OptimizerState};
pub use problems::{Problem, ProblemError};
pub use runtime::{run, DelayModel, GradMsg, Mode, RunConfig, RunError, RunHooks, RunTrace};
pub use staleness::{ParamHistory, ReadMeta, ReadMode, StalenessPolicy};
pub use vectormath::{BoxConstraint, DenseVec, SparseVec};
