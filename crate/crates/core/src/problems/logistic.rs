use std::sync::Arc;

use super::{check_dim, check_samples, Dataset, Problem, ProblemError};
use crate::vectormath::{BoxConstraint, DenseVec};

/// L2-regularized logistic regression,
/// `F(w) = (1/N) Σ log(1 + exp(-y_j w·x_j)) + (l2/2)‖w‖²`.
#[derive(Debug, Clone)]
pub struct Logistic {
    data: Arc<Dataset>,
    l2: f64,
    bounds: BoxConstraint,
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Logistic {
    pub fn new(data: Arc<Dataset>, l2: f64) -> Result<Self, ProblemError> {
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(ProblemError::Invalid(format!("l2 must be >= 0, got {l2}")));
        }
        if let Some((index, &label)) = data.labels.iter().enumerate().find(|(_, y)| **y != 1 && **y != -1) {
            return Err(ProblemError::NonBinaryLabel { index, label });
        }
        let n = data.n_features;
        Ok(Logistic { data, l2, bounds: BoxConstraint::unbounded(n) })
    }

    pub fn with_bounds(mut self, bounds: BoxConstraint) -> Result<Self, ProblemError> {
        check_dim(self.data.n_features, bounds.dim())?;
        self.bounds = bounds;
        Ok(self)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    fn accumulate_grad<I: Iterator<Item = usize>>(
        &self,
        x: &[f64],
        samples: I,
        count: usize,
    ) -> Result<DenseVec, ProblemError> {
        let mut g = DenseVec::zeros(x.len());
        for j in samples {
            let row = &self.data.rows[j];
            let y = self.data.labels[j] as f64;
            let margin = y * row.dot_dense(x)?;
            // d/dw log(1+exp(-y w·x)) = -y σ(-y w·x) x
            row.axpy_into(-y * sigmoid(-margin), &mut g);
        }
        let inv = 1.0 / count as f64;
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi = *gi * inv + self.l2 * xi;
        }
        Ok(g)
    }
}

impl Problem for Logistic {
    fn dim(&self) -> usize {
        self.data.n_features
    }

    fn bounds(&self) -> &BoxConstraint {
        &self.bounds
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn full_value(&self, x: &[f64]) -> Result<f64, ProblemError> {
        check_dim(self.dim(), x.len())?;
        let mut loss = 0.0;
        for (row, y) in self.data.rows.iter().zip(&self.data.labels) {
            loss += softplus(-(*y as f64) * row.dot_dense(x)?);
        }
        let reg = x.iter().fold(0.0, |acc, v| acc + v * v);
        Ok(loss / self.data.len() as f64 + 0.5 * self.l2 * reg)
    }

    fn full_grad(&self, x: &[f64]) -> Result<DenseVec, ProblemError> {
        check_dim(self.dim(), x.len())?;
        self.accumulate_grad(x, 0..self.data.len(), self.data.len())
    }

    fn batch_grad(&self, x: &[f64], samples: &[usize]) -> Result<DenseVec, ProblemError> {
        check_dim(self.dim(), x.len())?;
        check_samples(samples, self.data.len())?;
        self.accumulate_grad(x, samples.iter().copied(), samples.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{grad_check, synth_classification};
    use crate::vectormath::SparseVec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> Logistic {
        Logistic::new(Arc::new(synth_classification(60, 8, false, 5)), 0.01).unwrap()
    }

    #[test]
    fn value_and_gradient_at_zero() {
        let lr = Logistic::new(Arc::new(synth_classification(60, 8, false, 5)), 0.0).unwrap();
        let w = vec![0.0; 8];
        assert!((lr.full_value(&w).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let d = lr.dataset();
        let mut want = vec![0.0; 8];
        for (row, y) in d.rows.iter().zip(&d.labels) {
            row.axpy_into(-(*y as f64) / (2.0 * d.len() as f64), &mut want);
        }
        let got = lr.full_grad(&w).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn finite_difference_check() {
        let lr = small();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let w: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let err = grad_check(&lr, &w, 1e-6).unwrap();
            assert!(err <= 1e-5, "{err}");
        }
    }

    #[test]
    fn separable_limit_decreases_to_zero() {
        let data = Dataset::new(vec![SparseVec::new(vec![0], vec![1.0]).unwrap()], vec![1], 1).unwrap();
        let lr = Logistic::new(Arc::new(data), 0.0).unwrap();
        let mut prev = f64::INFINITY;
        for t in [0.0, 1.0, 5.0, 20.0, 100.0, 800.0] {
            let f = lr.full_value(&[t]).unwrap();
            assert!(f < prev);
            prev = f;
        }
        assert!(prev < 1e-300);
    }

    #[test]
    fn rejects_multiclass_labels() {
        let data = Dataset::new(vec![SparseVec::new(vec![0], vec![1.0]).unwrap(); 2], vec![0, 2], 1).unwrap();
        assert!(matches!(Logistic::new(Arc::new(data), 0.0), Err(ProblemError::NonBinaryLabel { index: 0, label: 0 })));
    }

    #[test]
    fn epoch_partition_is_unbiased() {
        let lr = small();
        let w: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
        let full = lr.full_grad(&w).unwrap();
        let n = lr.num_samples();
        let b = 7;
        let mut acc = vec![0.0; 8];
        let mut start = 0;
        while start < n {
            let idx: Vec<usize> = (start..(start + b).min(n)).collect();
            let g = lr.batch_grad(&w, &idx).unwrap();
            for (a, gi) in acc.iter_mut().zip(g.iter()) {
                *a += gi * idx.len() as f64 / n as f64;
            }
            start += b;
        }
        for (a, f) in acc.iter().zip(full.iter()) {
            assert!((a - f).abs() <= 1e-10);
        }
    }

    #[test]
    fn convex_along_segments() {
        let lr = small();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lam: f64 = rng.random_range(0.0..1.0);
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
            let lhs = lr.full_value(&mid).unwrap();
            let rhs = lam * lr.full_value(&x).unwrap() + (1.0 - lam) * lr.full_value(&y).unwrap();
            assert!(lhs <= rhs + 1e-9);
        }
    }

    #[test]
    fn batch_errors() {
        let lr = small();
        assert!(lr.batch_grad(&[0.0; 8], &[]).is_err());
        assert!(matches!(lr.batch_grad(&[0.0; 8], &[1000]), Err(ProblemError::SampleOutOfRange { .. })));
        assert!(lr.full_value(&[0.0; 3]).is_err());
    }
}
