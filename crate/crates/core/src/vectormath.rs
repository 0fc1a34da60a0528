//! Dense and sparse vector arithmetic with component-wise conventions.
//!
//! Division follows the `0/0 = 0` rule; a nonzero numerator over a zero
//! denominator is rejected. All reductions run left to right in coordinate
//! order so results are reproducible bit-for-bit.

use std::ops::{Deref, DerefMut, Index, IndexMut};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VecError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("division of nonzero {numerator} by zero at coordinate {index}")]
    DivisionByZero { index: usize, numerator: f64 },
    #[error("negative or NaN divisor {value} at coordinate {index}")]
    NegativeDivisor { index: usize, value: f64 },
    #[error("square root of negative value {value} at coordinate {index}")]
    NegativeSqrt { index: usize, value: f64 },
    #[error("sparse indices must be strictly increasing (position {position})")]
    UnsortedIndices { position: usize },
    #[error("sparse vector stores an explicit zero at index {index}")]
    StoredZero { index: usize },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("box lower bound {lower} exceeds upper bound {upper} at coordinate {index}")]
    InvalidBox { index: usize, lower: f64, upper: f64 },
}

fn check_len(a: usize, b: usize) -> Result<(), VecError> {
    if a == b {
        Ok(())
    } else {
        Err(VecError::LengthMismatch { left: a, right: b })
    }
}

/// Fixed-length vector of `f64`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseVec(Vec<f64>);

impl DenseVec {
    pub fn zeros(n: usize) -> Self {
        DenseVec(vec![0.0; n])
    }

    pub fn filled(n: usize, value: f64) -> Self {
        DenseVec(vec![value; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc + v * v)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc + v.abs())
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    /// Number of nonzero entries, `‖x‖₀`.
    pub fn nnz(&self) -> usize {
        self.0.iter().filter(|v| **v != 0.0).count()
    }

    pub fn dot(&self, other: &DenseVec) -> Result<f64, VecError> {
        check_len(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).fold(0.0, |acc, (a, b)| acc + a * b))
    }

    pub fn sub(&self, other: &DenseVec) -> Result<DenseVec, VecError> {
        check_len(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> DenseVec {
        self.0.iter().map(|v| v * s).collect()
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &DenseVec) -> Result<f64, VecError> {
        check_len(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).fold(0.0, |acc: f64, (a, b)| acc.max((a - b).abs())))
    }
}

impl Deref for DenseVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DenseVec {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Index<usize> for DenseVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for DenseVec {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<Vec<f64>> for DenseVec {
    fn from(v: Vec<f64>) -> Self {
        DenseVec(v)
    }
}

impl From<&[f64]> for DenseVec {
    fn from(v: &[f64]) -> Self {
        DenseVec(v.to_vec())
    }
}

impl FromIterator<f64> for DenseVec {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        DenseVec(iter.into_iter().collect())
    }
}

/// Sparse vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVec {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self, VecError> {
        check_len(indices.len(), values.len())?;
        for (pos, w) in indices.windows(2).enumerate() {
            if w[0] >= w[1] {
                return Err(VecError::UnsortedIndices { position: pos + 1 });
            }
        }
        if let Some(pos) = values.iter().position(|v| *v == 0.0) {
            return Err(VecError::StoredZero { index: indices[pos] });
        }
        Ok(SparseVec { indices, values })
    }

    /// Builds from a dense slice, dropping zeros.
    pub fn from_dense(x: &[f64]) -> Self {
        let (indices, values) = x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).unzip();
        SparseVec { indices, values }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// Largest stored index plus one, or 0 when empty.
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |i| i + 1)
    }

    pub fn dot_dense(&self, x: &[f64]) -> Result<f64, VecError> {
        if self.min_dim() > x.len() {
            return Err(VecError::IndexOutOfRange { index: self.min_dim() - 1, dim: x.len() });
        }
        Ok(self.iter().fold(0.0, |acc, (i, v)| acc + v * x[i]))
    }

    /// `y += a * self`
    pub fn axpy_into(&self, a: f64, y: &mut [f64]) {
        for (i, v) in self.iter() {
            y[i] += a * v;
        }
    }

    pub fn to_dense(&self, n: usize) -> Result<DenseVec, VecError> {
        if self.min_dim() > n {
            return Err(VecError::IndexOutOfRange { index: self.min_dim() - 1, dim: n });
        }
        let mut out = DenseVec::zeros(n);
        for (i, v) in self.iter() {
            out[i] = v;
        }
        Ok(out)
    }
}

/// Per-coordinate interval `[lower_i, upper_i]`; infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraint {
    lower: DenseVec,
    upper: DenseVec,
}

impl BoxConstraint {
    pub fn new(lower: DenseVec, upper: DenseVec) -> Result<Self, VecError> {
        check_len(lower.len(), upper.len())?;
        for (i, (l, u)) in lower.iter().zip(upper.iter()).enumerate() {
            // NaN bounds fail this comparison too
            if !(l <= u) {
                return Err(VecError::InvalidBox { index: i, lower: *l, upper: *u });
            }
        }
        Ok(BoxConstraint { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        BoxConstraint { lower: DenseVec::filled(n, f64::NEG_INFINITY), upper: DenseVec::filled(n, f64::INFINITY) }
    }

    /// `[lo, hi]ⁿ`
    pub fn uniform(n: usize, lo: f64, hi: f64) -> Result<Self, VecError> {
        Self::new(DenseVec::filled(n, lo), DenseVec::filled(n, hi))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DenseVec {
        &self.lower
    }

    pub fn upper(&self) -> &DenseVec {
        &self.upper
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(self.upper.iter()).all(|v| v.is_finite())
    }

    pub fn is_unconstrained(&self) -> bool {
        self.lower.iter().all(|v| *v == f64::NEG_INFINITY) && self.upper.iter().all(|v| *v == f64::INFINITY)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(self.upper.iter())).all(|(v, (l, u))| l <= v && v <= u)
    }

    /// `max_i (upper_i - lower_i)`, the ∞-norm diameter. `None` if unbounded.
    pub fn diameter_inf(&self) -> Option<f64> {
        if !self.is_bounded() {
            return None;
        }
        Some(self.lower.iter().zip(self.upper.iter()).fold(0.0, |acc: f64, (l, u)| acc.max(u - l)))
    }
}

/// Component-wise `a ⊘ b` with `0/0 = 0`.
pub fn safe_div(a: &[f64], b: &[f64]) -> Result<DenseVec, VecError> {
    check_len(a.len(), b.len())?;
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (&x, &y))| {
            if !(y >= 0.0) {
                Err(VecError::NegativeDivisor { index: i, value: y })
            } else if y == 0.0 {
                if x == 0.0 {
                    Ok(0.0)
                } else {
                    Err(VecError::DivisionByZero { index: i, numerator: x })
                }
            } else {
                Ok(x / y)
            }
        })
        .collect()
}

/// `‖x‖²_v = Σ v_i x_i²`
pub fn weighted_norm_sq(x: &[f64], v: &[f64]) -> Result<f64, VecError> {
    check_len(x.len(), v.len())?;
    Ok(x.iter().zip(v).fold(0.0, |acc, (xi, vi)| acc + vi * xi * xi))
}

/// Clamps every coordinate into the box.
pub fn project_box(x: &[f64], bx: &BoxConstraint) -> Result<DenseVec, VecError> {
    check_len(x.len(), bx.dim())?;
    Ok(x.iter().zip(bx.lower.iter().zip(bx.upper.iter())).map(|(v, (l, u))| v.max(*l).min(*u)).collect())
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<DenseVec, VecError> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

pub fn sqrt_vec(v: &[f64]) -> Result<DenseVec, VecError> {
    v.iter()
        .enumerate()
        .map(|(i, &x)| if x >= 0.0 { Ok(x.sqrt()) } else { Err(VecError::NegativeSqrt { index: i, value: x }) })
        .collect()
}

pub fn max_vec(a: &[f64], b: &[f64]) -> Result<DenseVec, VecError> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x.max(*y)).collect())
}

/// `alpha * a + b`
pub fn axpy(alpha: f64, a: &[f64], b: &[f64]) -> Result<DenseVec, VecError> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| alpha * x + y).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn safe_div_zero_over_zero_is_zero() {
        assert_eq!(safe_div(&[0.0], &[0.0]).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn safe_div_identity_divisor() {
        assert_eq!(safe_div(&[3.0, -2.0], &[1.0, 1.0]).unwrap().as_slice(), &[3.0, -2.0]);
    }

    #[test]
    fn safe_div_nonzero_over_zero_errors() {
        assert_eq!(safe_div(&[1.0, 2.0], &[1.0, 0.0]), Err(VecError::DivisionByZero { index: 1, numerator: 2.0 }));
        assert!(matches!(safe_div(&[1.0], &[1.0, 2.0]), Err(VecError::LengthMismatch { .. })));
        assert!(matches!(safe_div(&[1.0], &[-1.0]), Err(VecError::NegativeDivisor { .. })));
    }

    #[test]
    fn safe_div_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.random_range(1..20);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..10.0)).collect();
            let got = safe_div(&a, &b).unwrap();
            let mut want = Vec::with_capacity(n);
            for i in 0..n {
                want.push(a[i] / b[i]);
            }
            assert_eq!(got.as_slice(), want.as_slice());
        }
    }

    #[test]
    fn weighted_norm_examples() {
        assert_eq!(weighted_norm_sq(&[1.0, 2.0], &[1.0, 1.0]).unwrap(), 5.0);
        assert_eq!(weighted_norm_sq(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(weighted_norm_sq(&[2.0, 3.0], &[0.25, 4.0]).unwrap(), 37.0);
        assert!(weighted_norm_sq(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn project_box_examples() {
        let b1 = BoxConstraint::uniform(1, -1.0, 1.0).unwrap();
        assert_eq!(project_box(&[0.5], &b1).unwrap().as_slice(), &[0.5]);
        let b2 = BoxConstraint::uniform(2, -1.0, 1.0).unwrap();
        assert_eq!(project_box(&[1.5, -3.0], &b2).unwrap().as_slice(), &[1.0, -1.0]);
        let free = BoxConstraint::unbounded(2);
        assert_eq!(project_box(&[1e300, -7.0], &free).unwrap().as_slice(), &[1e300, -7.0]);
    }

    #[test]
    fn invalid_box_rejected() {
        assert!(BoxConstraint::new(DenseVec::from(vec![1.0]), DenseVec::from(vec![0.0])).is_err());
    }

    // Grid minimizer of ‖y - x‖²_v over a 2-d box, step 1e-3.
    #[test]
    fn project_box_matches_weighted_grid_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (lo, hi) = (-0.5, 0.7);
        let bx = BoxConstraint::uniform(2, lo, hi).unwrap();
        let step = 1e-3;
        let steps = ((hi - lo) / step).round() as usize;
        for _ in 0..5 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let v = [rng.random_range(0.1..5.0), rng.random_range(0.1..5.0)];
            let mut best = (f64::INFINITY, [0.0, 0.0]);
            for i in 0..=steps {
                let y0 = lo + i as f64 * step;
                for j in 0..=steps {
                    let y1 = lo + j as f64 * step;
                    let d = v[0] * (y0 - x[0]).powi(2) + v[1] * (y1 - x[1]).powi(2);
                    if d < best.0 {
                        best = (d, [y0, y1]);
                    }
                }
            }
            let p = project_box(&x, &bx).unwrap();
            assert!((p[0] - best.1[0]).abs() <= step, "{p:?} vs {:?}", best.1);
            assert!((p[1] - best.1[1]).abs() <= step, "{p:?} vs {:?}", best.1);
        }
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(max_vec(&[1.0, 5.0], &[3.0, 2.0]).unwrap().as_slice(), &[3.0, 5.0]);
        assert_eq!(sqrt_vec(&[4.0, 9.0]).unwrap().as_slice(), &[2.0, 3.0]);
        assert_eq!(hadamard(&[2.0, 3.0], &[4.0, 5.0]).unwrap().as_slice(), &[8.0, 15.0]);
        assert_eq!(axpy(2.0, &[1.0, 2.0], &[1.0, 1.0]).unwrap().as_slice(), &[3.0, 5.0]);
        assert!(matches!(sqrt_vec(&[1.0, -1.0]), Err(VecError::NegativeSqrt { index: 1, .. })));
    }

    #[test]
    fn sparse_validation() {
        assert!(SparseVec::new(vec![0, 2, 5], vec![1.0, 2.0, 3.0]).is_ok());
        assert!(matches!(SparseVec::new(vec![2, 2], vec![1.0, 1.0]), Err(VecError::UnsortedIndices { .. })));
        assert!(matches!(SparseVec::new(vec![1], vec![0.0]), Err(VecError::StoredZero { index: 1 })));
        let s = SparseVec::from_dense(&[0.0, 1.5, 0.0, -2.0]);
        assert_eq!(s.indices(), &[1, 3]);
        assert_eq!(s.dot_dense(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 3.0 - 8.0);
        assert_eq!(s.to_dense(4).unwrap().as_slice(), &[0.0, 1.5, 0.0, -2.0]);
        assert!(s.to_dense(3).is_err());
    }

    fn vec_pair(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (prop::collection::vec(-100.0f64..100.0, n), prop::collection::vec(-100.0f64..100.0, n))
    }

    proptest! {
        #[test]
        fn safe_div_by_ones_is_identity(x in prop::collection::vec(-1e6f64..1e6, 1..32)) {
            let ones = vec![1.0; x.len()];
            let q = safe_div(&x, &ones).unwrap();
            prop_assert_eq!(q.as_slice(), x.as_slice());
        }

        #[test]
        fn projection_idempotent_and_nonexpansive(
            (x, y) in (1usize..16).prop_flat_map(vec_pair),
            lo in -10.0f64..0.0,
            width in 0.0f64..20.0,
        ) {
            let bx = BoxConstraint::uniform(x.len(), lo, lo + width).unwrap();
            let px = project_box(&x, &bx).unwrap();
            let py = project_box(&y, &bx).unwrap();
            prop_assert_eq!(project_box(&px, &bx).unwrap(), px.clone());
            prop_assert!(bx.contains(&px));
            let dp = px.sub(&py).unwrap().norm();
            let dxy = DenseVec::from(x.clone()).sub(&DenseVec::from(y.clone())).unwrap().norm();
            prop_assert!(dp <= dxy + 1e-12);
        }

        #[test]
        fn weighted_norm_equals_scaled_euclidean(
            x in prop::collection::vec(-100.0f64..100.0, 1..32),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = x.iter().map(|_| rng.random_range(0.0..10.0)).collect();
            let lhs = weighted_norm_sq(&x, &v).unwrap();
            let rhs = hadamard(&sqrt_vec(&v).unwrap(), &x).unwrap().norm_sq();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1e-300));
        }
    }
}
