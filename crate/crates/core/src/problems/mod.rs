//! Finite-sum objectives `F(x) = (1/N) Σ f(x; ξ_j)` with exact gradients and
//! seeded mini-batch gradients.

mod dataset;
mod logistic;
mod mlp;
mod quadratic;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::rng_from;
use crate::vectormath::{project_box, BoxConstraint, DenseVec, VecError};

pub use dataset::{
    load_libsvm, parse_libsvm, synth_classification, synth_multiclass, synth_sparse_classification, write_libsvm,
    Dataset,
};
pub use logistic::Logistic;
pub use mlp::{Mlp2, Mlp2Layout};
pub use quadratic::Quadratic;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} at sample {index} is not ±1")]
    NonBinaryLabel { index: usize, label: i64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sample index {index} out of range ({samples} samples)")]
    SampleOutOfRange { index: usize, samples: usize },
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Vector(#[from] VecError),
}

/// Objective interface consumed by the optimizer and the runtime.
///
/// Implementations are read-only after construction, so gradients may be
/// requested concurrently from many workers.
pub trait Problem: Send + Sync {
    fn dim(&self) -> usize;

    fn bounds(&self) -> &BoxConstraint;

    /// Number of terms `N` in the finite sum.
    fn num_samples(&self) -> usize;

    fn full_value(&self, x: &[f64]) -> Result<f64, ProblemError>;

    fn full_grad(&self, x: &[f64]) -> Result<DenseVec, ProblemError>;

    /// Average gradient of the terms listed in `samples` (repeats allowed).
    fn batch_grad(&self, x: &[f64], samples: &[usize]) -> Result<DenseVec, ProblemError>;

    /// Gradient averaged over `batch` terms drawn uniformly with replacement
    /// from a stream seeded by `seed`.
    fn minibatch_grad(&self, x: &[f64], batch: usize, seed: u64) -> Result<DenseVec, ProblemError> {
        let idx = sample_batch(self.num_samples(), batch, seed);
        self.batch_grad(x, &idx)
    }

    /// Standard Gaussian start, projected onto the feasible box.
    fn initial_point(&self, seed: u64) -> DenseVec {
        let mut rng = rng_from(seed);
        let x: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        project_box(&x, self.bounds()).expect("box matches dimension")
    }
}

/// `batch` indices in `0..samples`, uniform with replacement.
pub fn sample_batch(samples: usize, batch: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from(seed);
    (0..batch).map(|_| rng.random_range(0..samples)).collect()
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<(), ProblemError> {
    if expected == got {
        Ok(())
    } else {
        Err(ProblemError::DimensionMismatch { expected, got })
    }
}

pub(crate) fn check_samples(samples: &[usize], n: usize) -> Result<(), ProblemError> {
    if samples.is_empty() {
        return Err(ProblemError::Invalid("empty batch".into()));
    }
    match samples.iter().find(|&&i| i >= n) {
        Some(&index) => Err(ProblemError::SampleOutOfRange { index, samples: n }),
        None => Ok(()),
    }
}

/// Coordinates checked by [`grad_check`] above this dimension are subsampled.
pub const GRAD_CHECK_FULL_LIMIT: usize = 1000;
const GRAD_CHECK_SUBSAMPLE: usize = 200;

/// Largest relative error between `full_grad` and central differences
/// `(F(x+h e_i) - F(x-h e_i)) / 2h`. The error is measured as
/// `|fd - g| / max(|fd|, |g|, 1)`.
pub fn grad_check<P: Problem + ?Sized>(problem: &P, x: &[f64], h: f64) -> Result<f64, ProblemError> {
    if !(h > 0.0) {
        return Err(ProblemError::Invalid(format!("step h must be positive, got {h}")));
    }
    check_dim(problem.dim(), x.len())?;
    let grad = problem.full_grad(x)?;
    let n = x.len();
    let coords: Vec<usize> = if n > GRAD_CHECK_FULL_LIMIT {
        let mut rng = rng_from(n as u64);
        (0..GRAD_CHECK_SUBSAMPLE).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = problem.full_value(&probe)?;
        probe[i] = orig - h;
        let fm = problem.full_value(&probe)?;
        probe[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Result of [`solve_reference`].
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub x: DenseVec,
    pub value: f64,
    pub iterations: usize,
    /// Norm of the last projected-gradient step divided by its step size.
    pub stationarity: f64,
}

/// Full-batch projected gradient descent with backtracking, used to obtain a
/// reference optimum `F*` for objective-error reporting.
pub fn solve_reference<P: Problem + ?Sized>(
    problem: &P,
    x0: DenseVec,
    max_iters: usize,
    tol: f64,
) -> Result<ReferenceSolution, ProblemError> {
    check_dim(problem.dim(), x0.len())?;
    let bx = problem.bounds();
    let mut x = project_box(&x0, bx)?;
    let mut fx = problem.full_value(&x)?;
    let mut t = 1.0;
    let mut stationarity = f64::INFINITY;
    let mut it = 0;
    while it < max_iters {
        it += 1;
        let g = problem.full_grad(&x)?;
        loop {
            let trial: Vec<f64> = x.iter().zip(g.iter()).map(|(xi, gi)| xi - t * gi).collect();
            let y = project_box(&trial, bx)?;
            let d = y.sub(&x)?;
            let fy = problem.full_value(&y)?;
            let model = fx + g.dot(&d)? + d.norm_sq() / (2.0 * t);
            if fy <= model + 1e-15 * fx.abs() {
                stationarity = d.norm() / t;
                x = y;
                fx = fy;
                t *= 2.0;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                return Err(ProblemError::Invalid("line search failed".into()));
            }
        }
        if stationarity < tol {
            break;
        }
    }
    Ok(ReferenceSolution { x, value: fx, iterations: it, stationarity })
}
