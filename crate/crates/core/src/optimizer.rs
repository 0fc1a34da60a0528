//! AMSGrad state machine driven by the master.
//!
//! One [`OptimizerState::step`] applies
//!
//! ```text
//! m    <- β₁ m + (1-β₁) g
//! v    <- β₂ v + (1-β₂) g²
//! v̂    <- max(v̂, v)
//! x    <- Π_X( x - α_k m ⊘ (√v̂ + ε) )
//! ```
//!
//! where `Π_X` is the clamp onto a box. For a box `X` and diagonal weights the
//! clamp is the exact minimizer of `⟨m, y⟩ + ‖y - x‖²_{√v̂}/(2α_k)`. Coordinates
//! whose denominator is zero are frozen at their previous value.

use thiserror::Error;

use crate::problems::{Problem, ProblemError};
use crate::rng::batch_seed;
use crate::vectormath::{BoxConstraint, DenseVec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("gradient has non-finite entry {value} at coordinate {index}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("dimension mismatch: state has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid hyper-parameter: {0}")]
    InvalidHyperParam(String),
    #[error("iteration index must be >= 1")]
    ZeroIteration,
    #[error("step size must be positive and finite, got {0}")]
    BadStepSize(f64),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Step-size schedule `α_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    /// `α / √K` for every `k`, with `K` the run horizon.
    ConstOverSqrtK { alpha: f64, horizon: u64 },
    /// `α / √k`
    InvSqrtK { alpha: f64 },
    /// `α` for every `k`.
    Constant { alpha: f64 },
}

impl LrSchedule {
    pub fn alpha_at(&self, k: u64) -> Result<f64, OptimError> {
        if k == 0 {
            return Err(OptimError::ZeroIteration);
        }
        Ok(match *self {
            LrSchedule::ConstOverSqrtK { alpha, horizon } => alpha / (horizon as f64).sqrt(),
            LrSchedule::InvSqrtK { alpha } => alpha / (k as f64).sqrt(),
            LrSchedule::Constant { alpha } => alpha,
        })
    }

    pub fn base_alpha(&self) -> f64 {
        match *self {
            LrSchedule::ConstOverSqrtK { alpha, .. }
            | LrSchedule::InvSqrtK { alpha }
            | LrSchedule::Constant { alpha } => alpha,
        }
    }

    /// `α_1..α_K`
    pub fn sequence(&self, steps: u64) -> Vec<f64> {
        (1..=steps).map(|k| self.alpha_at(k).expect("k >= 1")).collect()
    }

    fn validate(&self) -> Result<(), OptimError> {
        let alpha = self.base_alpha();
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(OptimError::InvalidHyperParam(format!("alpha must be positive, got {alpha}")));
        }
        if let LrSchedule::ConstOverSqrtK { horizon: 0, .. } = self {
            return Err(OptimError::InvalidHyperParam("horizon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub beta1: f64,
    pub beta2: f64,
    pub schedule: LrSchedule,
    /// Denominator floor; 0 reproduces the analysed method exactly.
    pub eps: f64,
}

impl HyperParams {
    pub fn new(beta1: f64, beta2: f64, schedule: LrSchedule, eps: f64) -> Result<Self, OptimError> {
        let hp = HyperParams { beta1, beta2, schedule, eps };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(OptimError::InvalidHyperParam(format!("beta1 must lie in [0, 1), got {}", self.beta1)));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(OptimError::InvalidHyperParam(format!("beta2 must lie in [0, 1), got {}", self.beta2)));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(OptimError::InvalidHyperParam(format!("eps must be >= 0, got {}", self.eps)));
        }
        self.schedule.validate()
    }
}

/// What one step did, for instrumentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// `‖x^(k+1) - x^(k)‖`
    pub step_norm: f64,
    /// `‖m^(k) ⊘ √v̂^(k)‖` with `0/0 = 0`; frozen coordinates contribute nothing.
    pub scaled_moment_norm: f64,
    pub frozen: usize,
}

/// The master's mutable state `(x, m, v, v̂)` and iteration counter `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub x: DenseVec,
    pub m: DenseVec,
    pub v: DenseVec,
    pub vhat: DenseVec,
    /// Index of the current iterate `x^(k)`; starts at 1.
    pub k: u64,
}

impl OptimizerState {
    pub fn new(x0: DenseVec) -> Self {
        let n = x0.len();
        OptimizerState { x: x0, m: DenseVec::zeros(n), v: DenseVec::zeros(n), vhat: DenseVec::zeros(n), k: 1 }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Applies one update. On error the state is left untouched.
    pub fn step(
        &mut self,
        hp: &HyperParams,
        g: &[f64],
        alpha_k: f64,
        bx: &BoxConstraint,
    ) -> Result<StepReport, OptimError> {
        let n = self.dim();
        if g.len() != n {
            return Err(OptimError::DimensionMismatch { expected: n, got: g.len() });
        }
        if bx.dim() != n {
            return Err(OptimError::DimensionMismatch { expected: n, got: bx.dim() });
        }
        if let Some((index, &value)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(OptimError::NonFiniteGradient { index, value });
        }
        if !(alpha_k > 0.0 && alpha_k.is_finite()) {
            return Err(OptimError::BadStepSize(alpha_k));
        }

        let (b1, b2) = (hp.beta1, hp.beta2);
        let mut m = DenseVec::zeros(n);
        let mut v = DenseVec::zeros(n);
        let mut vhat = DenseVec::zeros(n);
        let mut x = DenseVec::zeros(n);
        let (lower, upper) = (bx.lower(), bx.upper());
        let mut step_sq = 0.0;
        let mut scaled_sq = 0.0;
        let mut frozen = 0;
        for i in 0..n {
            m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            vhat[i] = self.vhat[i].max(v[i]);
            let root = vhat[i].sqrt();
            let denom = root + hp.eps;
            if denom == 0.0 {
                x[i] = self.x[i];
                frozen += 1;
                continue;
            }
            if root > 0.0 {
                let r = m[i] / root;
                scaled_sq += r * r;
            }
            let trial = self.x[i] - alpha_k * m[i] / denom;
            x[i] = trial.max(lower[i]).min(upper[i]);
            let d = x[i] - self.x[i];
            step_sq += d * d;
        }
        if !x.is_finite() || !vhat.is_finite() {
            return Err(OptimError::InvalidHyperParam("update overflowed to a non-finite value".into()));
        }

        self.m = m;
        self.v = v;
        self.vhat = vhat;
        self.x = x;
        self.k += 1;
        Ok(StepReport { step_norm: step_sq.sqrt(), scaled_moment_norm: scaled_sq.sqrt(), frozen })
    }
}

/// Runs the synchronous reference method: at every step a fresh mini-batch
/// gradient is drawn at the current iterate. `on_step` sees the state after
/// each update together with the gradient that produced it.
pub fn run_serial_with<P, F>(
    problem: &P,
    hp: &HyperParams,
    x0: DenseVec,
    steps: u64,
    batch_size: usize,
    seed: u64,
    mut on_step: F,
) -> Result<OptimizerState, OptimError>
where
    P: Problem + ?Sized,
    F: FnMut(&OptimizerState, &[f64]),
{
    hp.validate()?;
    if x0.len() != problem.dim() {
        return Err(OptimError::DimensionMismatch { expected: problem.dim(), got: x0.len() });
    }
    let bx = problem.bounds().clone();
    let mut state = OptimizerState::new(x0);
    for j in 0..steps {
        let g = problem.minibatch_grad(&state.x, batch_size, batch_seed(seed, 0, j))?;
        let alpha = hp.schedule.alpha_at(state.k)?;
        state.step(hp, &g, alpha, &bx)?;
        on_step(&state, &g);
    }
    Ok(state)
}

/// Like [`run_serial_with`] but returns every state, starting with the initial one.
pub fn run_serial<P: Problem + ?Sized>(
    problem: &P,
    hp: &HyperParams,
    x0: DenseVec,
    steps: u64,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<OptimizerState>, OptimError> {
    let mut traj = vec![OptimizerState::new(x0.clone())];
    run_serial_with(problem, hp, x0, steps, batch_size, seed, |s, _| traj.push(s.clone()))?;
    Ok(traj)
}
