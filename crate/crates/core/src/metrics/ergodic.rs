use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use super::MetricsError;
use crate::rng::rng_from;
use crate::vectormath::DenseVec;

/// `w_k ∝ Σ_{j=k}^{K} α_j β₁^{j-k}`, normalized to sum to one.
pub fn ergodic_weights(alphas: &[f64], beta1: f64) -> Result<Vec<f64>, MetricsError> {
    if alphas.is_empty() {
        return Err(MetricsError::Invalid("need at least one step size".into()));
    }
    if !(0.0..1.0).contains(&beta1) {
        return Err(MetricsError::Invalid(format!("beta1 must lie in [0, 1), got {beta1}")));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(MetricsError::Invalid(format!("step sizes must be positive, got {a}")));
    }
    let mut raw = vec![0.0; alphas.len()];
    let mut acc = 0.0;
    for k in (0..alphas.len()).rev() {
        acc = alphas[k] + beta1 * acc;
        raw[k] = acc;
    }
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / total).collect())
}

/// `Σ_k w_k x^(k)`
pub fn ergodic_average(trajectory: &[DenseVec], weights: &[f64]) -> Result<DenseVec, MetricsError> {
    if trajectory.len() != weights.len() {
        return Err(MetricsError::LengthMismatch { expected: trajectory.len(), got: weights.len() });
    }
    let first = trajectory.first().ok_or_else(|| MetricsError::Invalid("empty trajectory".into()))?;
    let mut out = DenseVec::zeros(first.len());
    for (x, w) in trajectory.iter().zip(weights) {
        if x.len() != out.len() {
            return Err(MetricsError::LengthMismatch { expected: out.len(), got: x.len() });
        }
        for (o, xi) in out.iter_mut().zip(x.iter()) {
            *o += w * xi;
        }
    }
    Ok(out)
}

/// Draws `k ∈ [k0, K]` with probability `α_{k-1} / Σ_{j=k0}^{K} α_{j-1}`,
/// where `alphas[i]` holds `α_{i+1}`.
pub fn ncvx_sample_index(alphas: &[f64], k0: u64, k_max: u64, seed: u64) -> Result<u64, MetricsError> {
    if k0 < 2 || k0 > k_max {
        return Err(MetricsError::Invalid(format!("need 2 <= k0 <= K, got k0 = {k0}, K = {k_max}")));
    }
    if (alphas.len() as u64) < k_max - 1 {
        return Err(MetricsError::LengthMismatch { expected: (k_max - 1) as usize, got: alphas.len() });
    }
    let weights = &alphas[(k0 - 2) as usize..(k_max - 1) as usize];
    let dist = WeightedIndex::new(weights).map_err(|e| MetricsError::Invalid(e.to_string()))?;
    Ok(k0 + dist.sample(&mut rng_from(seed)) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let w = ergodic_weights(&[1.0, 1.0, 1.0], 0.5).unwrap();
        let want = [7.0 / 17.0, 6.0 / 17.0, 4.0 / 17.0];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_direct_double_sum() {
        let alphas = [0.3, 0.25, 0.2, 0.4, 0.1, 0.05];
        let b1: f64 = 0.7;
        let raw: Vec<f64> =
            (0..alphas.len()).map(|k| (k..alphas.len()).map(|j| alphas[j] * b1.powi((j - k) as i32)).sum()).collect();
        let total: f64 = raw.iter().sum();
        let w = ergodic_weights(&alphas, b1).unwrap();
        for (a, r) in w.iter().zip(&raw) {
            assert!((a - r / total).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_without_momentum() {
        let w = ergodic_weights(&[0.5; 8], 0.0).unwrap();
        assert!(w.iter().all(|v| (v - 0.125).abs() < 1e-16));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ergodic_weights(&[], 0.1).is_err());
        assert!(ergodic_weights(&[1.0, 0.0], 0.1).is_err());
        assert!(ergodic_weights(&[1.0], 1.0).is_err());
        assert!(ergodic_average(&[DenseVec::zeros(1)], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn averages() {
        let c = DenseVec::from(vec![1.0, -2.0]);
        let w = ergodic_weights(&[1.0, 2.0, 3.0], 0.4).unwrap();
        let avg = ergodic_average(&[c.clone(), c.clone(), c.clone()], &w).unwrap();
        assert!(avg.max_abs_diff(&c).unwrap() < 1e-15);
        let one = ergodic_average(&[c.clone()], &[1.0]).unwrap();
        assert_eq!(one, c);
        let traj = vec![DenseVec::from(vec![1.0]), DenseVec::from(vec![3.0])];
        assert_eq!(ergodic_average(&traj, &[0.25, 0.75]).unwrap().as_slice(), &[2.5]);
    }

    #[test]
    fn sample_index_range_and_degenerate_cases() {
        let alphas = vec![1.0; 20];
        assert_eq!(ncvx_sample_index(&alphas, 20, 20, 3).unwrap(), 20);
        for seed in 0..100 {
            let k = ncvx_sample_index(&alphas, 5, 20, seed).unwrap();
            assert!((5..=20).contains(&k));
        }
        assert_eq!(ncvx_sample_index(&alphas, 5, 20, 9).unwrap(), ncvx_sample_index(&alphas, 5, 20, 9).unwrap());
        assert!(ncvx_sample_index(&alphas, 1, 20, 0).is_err());
        assert!(ncvx_sample_index(&alphas, 21, 20, 0).is_err());
        assert!(ncvx_sample_index(&alphas[..5], 2, 20, 0).is_err());
    }

    #[test]
    fn sample_frequencies_match_weights() {
        // α_{k-1} for k = 2..=5 is 4, 3, 2, 1
        let alphas = [4.0, 3.0, 2.0, 1.0, 99.0];
        let draws = 100_000u64;
        let mut counts = [0u64; 4];
        for seed in 0..draws {
            counts[(ncvx_sample_index(&alphas, 2, 5, seed).unwrap() - 2) as usize] += 1;
        }
        for (c, w) in counts.iter().zip([0.4, 0.3, 0.2, 0.1]) {
            let sd = (draws as f64 * w * (1.0 - w)).sqrt();
            assert!((*c as f64 - draws as f64 * w).abs() <= 3.0 * sd, "{counts:?}");
        }
    }
}
