use rand::Rng;

use super::{check_dim, check_samples, Problem, ProblemError};
use crate::rng::rng_from;
use crate::vectormath::{BoxConstraint, DenseVec};

/// Separable quadratic `F(x) = ½ Σ a_i x_i² - b·x` with `a ≥ 0`.
///
/// Optionally a finite-sum form `f(x; ξ_j) = ½ Σ a_i x_i² - (b + ζ_j)·x` with
/// perturbations `ζ_j` that sum to exactly zero, so stochastic gradients are
/// unbiased while `F`, its minimizer and all gradient bounds stay in closed form.
#[derive(Debug, Clone)]
pub struct Quadratic {
    a: DenseVec,
    b: DenseVec,
    shifts: Vec<DenseVec>,
    bounds: BoxConstraint,
}

impl Quadratic {
    pub fn new(a: DenseVec, b: DenseVec) -> Result<Self, ProblemError> {
        check_dim(a.len(), b.len())?;
        if let Some((i, v)) = a.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(ProblemError::Invalid(format!("a[{i}] = {v} must be >= 0")));
        }
        if !b.is_finite() {
            return Err(ProblemError::Invalid("b must be finite".into()));
        }
        let n = a.len();
        Ok(Quadratic { a, b, shifts: Vec::new(), bounds: BoxConstraint::unbounded(n) })
    }

    /// Adds `samples` perturbations with entries uniform in `[-scale, scale]`,
    /// generated as `± pairs` so their mean is exactly zero. `samples` must be even.
    pub fn with_noise(mut self, samples: usize, scale: f64, seed: u64) -> Result<Self, ProblemError> {
        if samples == 0 || samples % 2 != 0 {
            return Err(ProblemError::Invalid(format!("noise samples must be even and positive, got {samples}")));
        }
        let mut rng = rng_from(seed);
        let n = self.a.len();
        let mut shifts = Vec::with_capacity(samples);
        for _ in 0..samples / 2 {
            let z: DenseVec = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
            shifts.push(z.scale(-1.0));
            shifts.push(z);
        }
        self.shifts = shifts;
        Ok(self)
    }

    pub fn with_bounds(mut self, bounds: BoxConstraint) -> Result<Self, ProblemError> {
        check_dim(self.a.len(), bounds.dim())?;
        self.bounds = bounds;
        Ok(self)
    }

    pub fn curvature(&self) -> &DenseVec {
        &self.a
    }

    /// Smoothness constant `max_i a_i`.
    pub fn lipschitz(&self) -> f64 {
        self.a.iter().fold(0.0, |acc: f64, v| acc.max(*v))
    }

    /// Closed-form minimizer over the box, or `None` if `F` is unbounded below.
    pub fn minimizer(&self) -> Option<DenseVec> {
        let (lo, hi) = (self.bounds.lower(), self.bounds.upper());
        let mut x = DenseVec::zeros(self.a.len());
        for i in 0..x.len() {
            let (a, b) = (self.a[i], self.b[i]);
            x[i] = if a > 0.0 {
                (b / a).max(lo[i]).min(hi[i])
            } else if b > 0.0 {
                hi[i]
            } else if b < 0.0 {
                lo[i]
            } else {
                0.0f64.max(lo[i]).min(hi[i])
            };
            if !x[i].is_finite() {
                return None;
            }
        }
        Some(x)
    }

    /// `F*` over the box.
    pub fn optimum_value(&self) -> Option<f64> {
        self.minimizer().map(|x| self.value_at(&x))
    }

    fn value_at(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.a.iter().zip(self.b.iter())).fold(0.0, |acc, (xi, (a, b))| acc + 0.5 * a * xi * xi - b * xi)
    }

    fn sample_grad_coord(&self, i: usize, x: f64, j: usize) -> f64 {
        let shift = self.shifts.get(j).map_or(0.0, |z| z[i]);
        self.a[i] * x - self.b[i] - shift
    }

    /// Exact `sup_{x∈X, ξ} ‖∇f(x;ξ)‖∞` and `sup_{x∈X} E_ξ‖∇f(x;ξ)‖₁` for a
    /// bounded box. Each coordinate is affine in `x_i`, so the suprema sit at
    /// the box corners.
    pub fn gradient_bounds(&self) -> Option<(f64, f64)> {
        if !self.bounds.is_bounded() {
            return None;
        }
        let terms = self.shifts.len().max(1);
        let (lo, hi) = (self.bounds.lower(), self.bounds.upper());
        let mut g_inf = 0.0f64;
        let mut g1 = 0.0;
        for i in 0..self.a.len() {
            let mut best_mean = 0.0f64;
            for end in [lo[i], hi[i]] {
                let mut mean_abs = 0.0;
                for j in 0..terms {
                    let v = self.sample_grad_coord(i, end, j).abs();
                    g_inf = g_inf.max(v);
                    mean_abs += v;
                }
                best_mean = best_mean.max(mean_abs / terms as f64);
            }
            g1 += best_mean;
        }
        Some((g_inf, g1))
    }
}

impl Problem for Quadratic {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn bounds(&self) -> &BoxConstraint {
        &self.bounds
    }

    fn num_samples(&self) -> usize {
        self.shifts.len().max(1)
    }

    fn full_value(&self, x: &[f64]) -> Result<f64, ProblemError> {
        check_dim(self.dim(), x.len())?;
        Ok(self.value_at(x))
    }

    fn full_grad(&self, x: &[f64]) -> Result<DenseVec, ProblemError> {
        check_dim(self.dim(), x.len())?;
        Ok(x.iter().zip(self.a.iter().zip(self.b.iter())).map(|(xi, (a, b))| a * xi - b).collect())
    }

    fn batch_grad(&self, x: &[f64], samples: &[usize]) -> Result<DenseVec, ProblemError> {
        check_dim(self.dim(), x.len())?;
        check_samples(samples, self.num_samples())?;
        let inv = 1.0 / samples.len() as f64;
        Ok((0..x.len())
            .map(|i| {
                let sum = samples.iter().fold(0.0, |acc, &j| acc + self.sample_grad_coord(i, x[i], j));
                sum * inv
            })
            .collect())
    }
}
