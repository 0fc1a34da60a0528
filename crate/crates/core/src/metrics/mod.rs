//! Ergodic averages, convergence-bound evaluators, analysis trackers and the
//! per-step inequality audit.

mod audit;
mod bounds;
mod ergodic;
mod estimate;
mod tracker;

use thiserror::Error;

pub use audit::{
    invariant_audit, AuditRecorder, AuditReport, AuditTrace, CheckResult, Snapshot, StepRecord, AUDIT_TOL,
};
pub use bounds::{bound_cvx_delay, bound_cvx_nodelay, bound_ncvx, BoundInputs, ConvexSchedule, NcvxBound, NcvxSetting};
pub use ergodic::{ergodic_average, ergodic_weights, ncvx_sample_index};
pub use estimate::{estimate_inputs, BoundKind, Estimate, InputEstimates, Provenance, SuppliedInputs};
pub use tracker::GammaPhiTracker;

use crate::staleness::StalenessError;
use crate::vectormath::VecError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("audit trace is missing snapshots: {0}")]
    MissingSnapshots(String),
    #[error(transparent)]
    Vector(#[from] VecError),
    #[error(transparent)]
    Staleness(#[from] StalenessError),
}
