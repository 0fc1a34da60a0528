use super::MetricsError;

/// Constants entering the convergence bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// Problem dimension.
    pub n: usize,
    /// `max_i (b_i - a_i)` of the feasible box.
    pub d_inf: f64,
    /// `sup_x E‖∇f(x; ξ)‖₁`
    pub g1: f64,
    /// `sup ‖∇f(x; ξ)‖∞`
    pub g_inf: f64,
    /// Smoothness constant.
    pub l: f64,
    /// Bound on `E‖g‖₀`.
    pub s: f64,
    pub tau: u64,
    /// Bound on `|F|`.
    pub c_f: f64,
    /// Floor `√ṽ_i ≥ c`.
    pub c: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
    pub k: u64,
    pub k0: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvexSchedule {
    /// `α_k = α/√K`
    ConstOverSqrtK,
    /// `α_k = α/√k`
    InvSqrtK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcvxSetting {
    /// `α_k = α/√(K-k0+1)`
    One,
    /// `α_k = α/√k` with `k0 = ⌈K/2⌉ ≥ τ+2`
    Two,
}

impl BoundInputs {
    fn check_common(&self) -> Result<(), MetricsError> {
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(MetricsError::Invalid(format!("beta1 must lie in [0, 1), got {}", self.beta1)));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(MetricsError::Invalid(format!("beta2 must lie in [0, 1), got {}", self.beta2)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(MetricsError::Invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.k == 0 {
            return Err(MetricsError::Invalid("K must be positive".into()));
        }
        for (name, v) in [
            ("D_inf", self.d_inf),
            ("G1", self.g1),
            ("G_inf", self.g_inf),
            ("L", self.l),
            ("s", self.s),
            ("C_F", self.c_f),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(MetricsError::Invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `(key, value)` pairs for echoing into a trace header.
    pub fn echo(&self) -> Vec<(String, String)> {
        [
            ("n", self.n.to_string()),
            ("D_inf", self.d_inf.to_string()),
            ("G1", self.g1.to_string()),
            ("G_inf", self.g_inf.to_string()),
            ("L", self.l.to_string()),
            ("s", self.s.to_string()),
            ("tau", self.tau.to_string()),
            ("C_F", self.c_f.to_string()),
            ("c", self.c.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("alpha", self.alpha.to_string()),
            ("K", self.k.to_string()),
            ("k0", self.k0.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("bound_input.{k}"), v))
        .collect()
    }
}

fn convex_numerator(bi: &BoundInputs, log_factor: f64, delay_term: f64) -> f64 {
    let (b1, b2, a) = (bi.beta1, bi.beta2, bi.alpha);
    let diameter_term = bi.n as f64 * bi.d_inf * bi.d_inf * bi.g_inf;
    let moment_term = a * a * log_factor / ((1.0 - b1) * (1.0 - b1)) * bi.g1 / (1.0 - b2).sqrt();
    diameter_term + moment_term + delay_term
}

/// Bound on `E[F(x̄^(K)) - F*]` without delay:
///
/// * `α/√K`: `(n D∞² G∞ + α² G1 / ((1-β₁)² √(1-β₂))) / (2α √K (1-β₁))`
/// * `α/√k`: `(n D∞² G∞ + α² (1+log K) G1 / ((1-β₁)² √(1-β₂))) / (4α (√(K+1)-1) (1-β₁))`
pub fn bound_cvx_nodelay(bi: &BoundInputs, schedule: ConvexSchedule) -> Result<f64, MetricsError> {
    bi.check_common()?;
    let (a, b1, k) = (bi.alpha, bi.beta1, bi.k as f64);
    Ok(match schedule {
        ConvexSchedule::ConstOverSqrtK => convex_numerator(bi, 1.0, 0.0) / (2.0 * a * k.sqrt() * (1.0 - b1)),
        ConvexSchedule::InvSqrtK => {
            convex_numerator(bi, 1.0 + k.ln(), 0.0) / (4.0 * a * ((k + 1.0).sqrt() - 1.0) * (1.0 - b1))
        }
    })
}

/// Bound on `E[F(x̄^(K)) - F*]` with staleness at most `τ` and `α_k = α/√K`:
/// the no-delay numerator plus `α³ L τ² s / (√K (1-β₂))`.
pub fn bound_cvx_delay(bi: &BoundInputs) -> Result<f64, MetricsError> {
    bi.check_common()?;
    let (a, b1, b2, k) = (bi.alpha, bi.beta1, bi.beta2, bi.k as f64);
    let tau = bi.tau as f64;
    let delay = a * a * a * bi.l * tau * tau * bi.s / (k.sqrt() * (1.0 - b2));
    Ok(convex_numerator(bi, 1.0, delay) / (2.0 * a * k.sqrt() * (1.0 - b1)))
}

/// Evaluated non-convex bound `C₁ + (C₂/c)(√C₁ + C₂/c)` on `E‖∇F(x̄^(k0,K))‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NcvxBound {
    pub c1: f64,
    pub c2: f64,
    /// Estimate of `E‖(ṽ^(k0-1))^{-1/2}‖₁` used, after capping at `n/c`.
    pub e_used: f64,
    pub bound: f64,
    /// Same bound with `E‖(ṽ^(k0-1))^{-1/2}‖₁` replaced by its cap `n/c`.
    pub bound_at_cap: f64,
}

fn ncvx_terms(bi: &BoundInputs, setting: NcvxSetting, e: f64) -> (f64, f64) {
    let (a, b1, b2) = (bi.alpha, bi.beta1, bi.beta2);
    let (g, l, s, tau) = (bi.g_inf, bi.l, bi.s, bi.tau as f64);
    match setting {
        NcvxSetting::One => {
            let span = (bi.k - bi.k0 + 1) as f64;
            let c2 = a * tau * s.sqrt() * l * g / ((1.0 - b2).sqrt() * span.sqrt());
            let c1 = g * g * g * e / ((1.0 - b1) * span)
                + 2.0 * bi.c_f * g / (a * span.sqrt())
                + 7.0 * s * l * g * (1.0 - 2.0 * b1 + 4.0 * b1 * b1) / (6.0 * (1.0 - b2) * (1.0 - b1) * (1.0 - b1)) * a
                    / span.sqrt();
            (c1, c2)
        }
        NcvxSetting::Two => {
            let k = bi.k as f64;
            let r = 2.0 - std::f64::consts::SQRT_2;
            let c2 = 2.0 * std::f64::consts::SQRT_2 * a * tau * s.sqrt() * l * g / (k.sqrt() * (1.0 - b2).sqrt());
            let c1 = g * g * g * e / (r * (1.0 - b1) * k.sqrt() * (k / 2.0 - 1.0).sqrt())
                + 2.0 * bi.c_f * g / (r * a * k.sqrt())
                + 7.0 * s * l * g / (6.0 * (1.0 - b2)) * a * 4f64.ln() / (r * k.sqrt())
                + 7.0 * s * l * g * b1 * b1 / (2.0 * (1.0 - b2) * (1.0 - b1) * (1.0 - b1)) * a * (1.0 + 3f64.ln())
                    / (r * k.sqrt());
            (c1, c2)
        }
    }
}

fn combine(c1: f64, c2: f64, c: f64) -> f64 {
    c1 + (c2 / c) * (c1.sqrt() + c2 / c)
}

/// Non-convex bound for either step-size setting. `e_vtilde_inv_l1` is an
/// estimate of `E‖(ṽ^(k0-1))^{-1/2}‖₁`; it is capped at `n/c`.
pub fn bound_ncvx(bi: &BoundInputs, setting: NcvxSetting, e_vtilde_inv_l1: f64) -> Result<NcvxBound, MetricsError> {
    bi.check_common()?;
    if !(bi.c > 0.0 && bi.c.is_finite()) {
        return Err(MetricsError::Invalid(format!("c must be positive, got {}", bi.c)));
    }
    if bi.k < 2 || bi.k0 < 2 || bi.k0 > bi.k {
        return Err(MetricsError::Invalid(format!("need K >= 2 and 2 <= k0 <= K, got K = {}, k0 = {}", bi.k, bi.k0)));
    }
    if !(e_vtilde_inv_l1 >= 0.0) {
        return Err(MetricsError::Invalid(format!("estimate must be >= 0, got {e_vtilde_inv_l1}")));
    }
    if setting == NcvxSetting::Two {
        let half = bi.k.div_ceil(2);
        if bi.k0 != half || bi.k0 < bi.tau + 2 || bi.k < 3 {
            return Err(MetricsError::Precondition(format!(
                "setting 2 needs k0 = ceil(K/2) >= tau + 2 and K > 2; got K = {}, k0 = {}, tau = {}",
                bi.k, bi.k0, bi.tau
            )));
        }
    }
    let cap = bi.n as f64 / bi.c;
    let e_used = e_vtilde_inv_l1.min(cap);
    let (c1, c2) = ncvx_terms(bi, setting, e_used);
    let (c1_cap, c2_cap) = ncvx_terms(bi, setting, cap);
    Ok(NcvxBound { c1, c2, e_used, bound: combine(c1, c2, bi.c), bound_at_cap: combine(c1_cap, c2_cap, bi.c) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> BoundInputs {
        BoundInputs {
            n: 2,
            d_inf: 1.0,
            g1: 1.0,
            g_inf: 1.0,
            l: 1.0,
            s: 1.0,
            tau: 0,
            c_f: 1.0,
            c: 0.2,
            beta1: 0.0,
            beta2: 0.0,
            alpha: 1.0,
            k: 4,
            k0: 2,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn convex_hand_values() {
        let bi = unit();
        assert!(rel(bound_cvx_nodelay(&bi, ConvexSchedule::ConstOverSqrtK).unwrap(), 0.75) <= 1e-12);
        let k1 = BoundInputs { k: 1, ..bi };
        assert!(rel(bound_cvx_nodelay(&k1, ConvexSchedule::ConstOverSqrtK).unwrap(), 1.5) <= 1e-12);
        let d = BoundInputs { tau: 2, ..bi };
        assert!(rel(bound_cvx_delay(&d).unwrap(), 1.25) <= 1e-12);
    }

    #[test]
    fn inv_sqrt_schedule_value() {
        // (2 + (1 + ln 4)) / (4 (√5 - 1))
        let want = (2.0 + 1.0 + 4f64.ln()) / (4.0 * (5f64.sqrt() - 1.0));
        let got = bound_cvx_nodelay(&unit(), ConvexSchedule::InvSqrtK).unwrap();
        assert!(rel(got, want) <= 1e-12);
    }

    #[test]
    fn delay_bound_reduces_exactly() {
        for k in [1, 7, 100, 12345] {
            let bi = BoundInputs { k, beta1: 0.9, beta2: 0.999, alpha: 0.3, g1: 3.5, ..unit() };
            assert_eq!(bound_cvx_delay(&bi).unwrap(), bound_cvx_nodelay(&bi, ConvexSchedule::ConstOverSqrtK).unwrap());
        }
    }

    #[test]
    fn decay_and_monotonicity() {
        let bi = unit();
        let small = bound_cvx_nodelay(&BoundInputs { k: 100, ..bi }, ConvexSchedule::ConstOverSqrtK).unwrap();
        let large = bound_cvx_nodelay(&BoundInputs { k: 1_000_000, ..bi }, ConvexSchedule::ConstOverSqrtK).unwrap();
        assert!(large > 0.0 && large < small);
        let mut prev = 0.0;
        for tau in 0..=10 {
            let b = bound_cvx_delay(&BoundInputs { tau, ..bi }).unwrap();
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn beta1_one_is_rejected() {
        let bi = BoundInputs { beta1: 1.0, ..unit() };
        assert!(bound_cvx_nodelay(&bi, ConvexSchedule::ConstOverSqrtK).is_err());
        assert!(bound_cvx_delay(&bi).is_err());
    }

    #[test]
    fn ncvx_setting_one_hand_value() {
        let bi = BoundInputs { n: 1, c: 0.1, k: 199, k0: 100, ..unit() };
        let r = bound_ncvx(&bi, NcvxSetting::One, 10.0).unwrap();
        let want = 0.1 + 0.2 + 7.0 / 60.0;
        assert!(rel(r.c1, want) <= 1e-12);
        assert_eq!(r.c2, 0.0);
        assert!(rel(r.bound, want) <= 1e-12);
        assert!(rel(r.bound_at_cap, want) <= 1e-12);
    }

    #[test]
    fn ncvx_estimate_is_capped() {
        let bi = BoundInputs { n: 3, c: 0.5, k: 50, k0: 25, tau: 2, ..unit() };
        let r = bound_ncvx(&bi, NcvxSetting::One, 1e9).unwrap();
        assert_eq!(r.e_used, 6.0);
        assert_eq!(r.bound, r.bound_at_cap);
        let low = bound_ncvx(&bi, NcvxSetting::One, 1.0).unwrap();
        assert!(low.bound < r.bound);
    }

    #[test]
    fn ncvx_monotone_in_tau_and_l() {
        for setting in [NcvxSetting::One, NcvxSetting::Two] {
            let base = BoundInputs { n: 5, c: 0.3, k: 200, k0: 100, beta1: 0.9, beta2: 0.99, ..unit() };
            let mut prev = 0.0;
            for tau in 0..20 {
                let b = bound_ncvx(&BoundInputs { tau, ..base }, setting, 3.0).unwrap().bound;
                assert!(b >= prev);
                prev = b;
            }
            let mut prev = 0.0;
            for l in [0.0, 0.5, 1.0, 2.0, 10.0] {
                let b = bound_ncvx(&BoundInputs { l, tau: 3, ..base }, setting, 3.0).unwrap().bound;
                assert!(b >= prev);
                prev = b;
            }
        }
    }

    #[test]
    fn ncvx_setting_two_preconditions() {
        let bi = BoundInputs { n: 5, c: 0.3, k: 200, k0: 100, tau: 98, ..unit() };
        assert!(bound_ncvx(&bi, NcvxSetting::Two, 1.0).is_ok());
        assert!(matches!(
            bound_ncvx(&BoundInputs { tau: 99, ..bi }, NcvxSetting::Two, 1.0),
            Err(MetricsError::Precondition(_))
        ));
        assert!(matches!(
            bound_ncvx(&BoundInputs { k0: 90, tau: 0, ..bi }, NcvxSetting::Two, 1.0),
            Err(MetricsError::Precondition(_))
        ));
        assert!(bound_ncvx(&BoundInputs { k: 201, k0: 101, tau: 0, ..bi }, NcvxSetting::Two, 1.0).is_ok());
        assert!(bound_ncvx(&BoundInputs { c: 0.0, ..bi }, NcvxSetting::One, 1.0).is_err());
    }

    #[test]
    fn ncvx_without_delay_is_c1() {
        let bi = BoundInputs { n: 4, c: 0.2, k: 1000, k0: 500, beta1: 0.5, beta2: 0.9, ..unit() };
        for setting in [NcvxSetting::One, NcvxSetting::Two] {
            let r = bound_ncvx(&bi, setting, 7.0).unwrap();
            assert_eq!(r.c2, 0.0);
            assert_eq!(r.bound, r.c1);
        }
    }
}
