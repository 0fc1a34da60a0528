use std::fmt::Write as _;

use super::MetricsError;
use crate::optimizer::{HyperParams, OptimizerState};
use crate::runtime::{ApplyEvent, RunError, RunHooks};
use crate::staleness::{mixture_bounds_check, MixtureReport};
use crate::vectormath::DenseVec;

/// Absolute slack below which an inequality counts as violated.
pub const AUDIT_TOL: f64 = 1e-9;

/// Per-step quantities recorded on the master when an update is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Index `k` of the iterate the step started from.
    pub k: u64,
    pub tau: u64,
    /// `‖x^(k+1) - x^(k)‖` and `α_k ‖m^(k) ⊘ √v̂^(k)‖`.
    pub step_norm: f64,
    pub step_bound: f64,
    pub mixture: MixtureReport,
    /// `‖g^(k) ⊘ √v̂^(k)‖` and `√(‖g^(k)‖₀ / (1-β₂))`.
    pub scaled_grad: f64,
    pub scaled_grad_bound: f64,
    /// `‖m^(k) ⊘ √v̂^(k)‖`.
    pub scaled_moment: f64,
    /// `min_i (v̂_i^(k) - v̂_i^(k-1))` and `min_i (v̂_i^(k) - v_i^(k))`.
    pub vhat_increment: f64,
    pub vhat_minus_v: f64,
}

/// Optimizer state after `step` applied updates, with the running sums
/// `S = Σ_j β₁^(k-j) ‖g^(j)‖₀` and `S' = Σ_j β₁^(k-j) √‖g^(j)‖₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: u64,
    pub x: DenseVec,
    pub m: DenseVec,
    pub v: DenseVec,
    pub vhat: DenseVec,
    pub gamma: DenseVec,
    pub s: f64,
    pub s_prime: f64,
}

/// Everything [`invariant_audit`] needs: per-step records, periodic state
/// snapshots and the applied gradients `g^(1), g^(2), …`.
#[derive(Debug, Clone)]
pub struct AuditTrace {
    pub beta1: f64,
    pub beta2: f64,
    pub stride: u64,
    pub steps: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub grads: Vec<DenseVec>,
}

/// Run hook that records an [`AuditTrace`], snapshotting every `stride`
/// applied steps.
pub struct AuditRecorder {
    beta1: f64,
    beta2: f64,
    stride: u64,
    steps: Vec<StepRecord>,
    snapshots: Vec<Snapshot>,
    grads: Vec<DenseVec>,
    gamma: DenseVec,
    s: f64,
    s_prime: f64,
    last: Option<OptimizerState>,
}

fn scaled_norm(a: &[f64], vhat: &[f64]) -> f64 {
    a.iter().zip(vhat).filter(|(_, v)| **v > 0.0).map(|(x, v)| x * x / v).sum::<f64>().sqrt()
}

/// `‖a ⊘ √v̂‖²` with `0/0 = 0`; `a_i ≠ 0` over `v̂_i = 0` is infinite.
fn scaled_norm_sq_strict(a: &[f64], vhat: &[f64]) -> f64 {
    a.iter().zip(vhat).fold(0.0, |acc, (x, v)| match (*x == 0.0, *v > 0.0) {
        (true, _) => acc,
        (false, true) => acc + x * x / v,
        (false, false) => f64::INFINITY,
    })
}

fn min_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(f64::INFINITY, |m, (x, y)| m.min(x - y))
}

impl AuditRecorder {
    pub fn new(hp: &HyperParams, stride: u64) -> Self {
        AuditRecorder {
            beta1: hp.beta1,
            beta2: hp.beta2,
            stride: stride.max(1),
            steps: Vec::new(),
            snapshots: Vec::new(),
            grads: Vec::new(),
            gamma: DenseVec::zeros(0),
            s: 0.0,
            s_prime: 0.0,
            last: None,
        }
    }

    fn snapshot(&mut self, state: &OptimizerState) {
        let step = self.grads.len() as u64;
        if self.snapshots.last().is_some_and(|s| s.step == step) {
            return;
        }
        self.snapshots.push(Snapshot {
            step,
            x: state.x.clone(),
            m: state.m.clone(),
            v: state.v.clone(),
            vhat: state.vhat.clone(),
            gamma: self.gamma.clone(),
            s: self.s,
            s_prime: self.s_prime,
        });
    }

    /// Takes a final snapshot and returns the recording.
    pub fn into_trace(mut self) -> AuditTrace {
        if let Some(state) = self.last.take() {
            self.snapshot(&state);
        }
        AuditTrace {
            beta1: self.beta1,
            beta2: self.beta2,
            stride: self.stride,
            steps: self.steps,
            snapshots: self.snapshots,
            grads: self.grads,
        }
    }
}

impl RunHooks for AuditRecorder {
    fn on_start(&mut self, state: &OptimizerState) -> Result<(), RunError> {
        self.steps.clear();
        self.snapshots.clear();
        self.grads.clear();
        self.gamma = DenseVec::zeros(state.dim());
        self.s = 0.0;
        self.s_prime = 0.0;
        self.snapshot(state);
        self.last = Some(state.clone());
        Ok(())
    }

    fn on_apply(&mut self, ev: &ApplyEvent<'_>) -> Result<(), RunError> {
        let g = &ev.msg.g;
        let after = ev.after;
        let mixture = mixture_bounds_check(ev.history, &ev.msg.read_meta)?;
        for (gm, gi) in self.gamma.as_mut_slice().iter_mut().zip(g.iter()) {
            *gm = gm.max(gi.abs());
        }
        let nnz = g.nnz() as f64;
        self.s = self.beta1 * self.s + nnz;
        self.s_prime = self.beta1 * self.s_prime + nnz.sqrt();
        self.steps.push(StepRecord {
            k: ev.before.k,
            tau: ev.tau,
            step_norm: ev.report.step_norm,
            step_bound: ev.alpha * ev.report.scaled_moment_norm,
            mixture,
            scaled_grad: scaled_norm_sq_strict(g, &after.vhat).sqrt(),
            scaled_grad_bound: (nnz / (1.0 - self.beta2)).sqrt(),
            scaled_moment: scaled_norm(&after.m, &after.vhat),
            vhat_increment: min_diff(&after.vhat, &ev.before.vhat),
            vhat_minus_v: min_diff(&after.vhat, &after.v),
        });
        self.grads.push(g.clone());
        if self.grads.len() as u64 % self.stride == 0 {
            self.snapshot(after);
        }
        self.last = Some(after.clone());
        Ok(())
    }
}

/// Outcome of one inequality `lhs ≤ rhs` over every evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub evaluations: u64,
    /// Smallest `rhs - lhs` seen; `+∞` if never evaluated.
    pub worst_slack: f64,
    pub lhs_at_worst: f64,
    pub rhs_at_worst: f64,
    pub max_lhs: f64,
    pub max_rhs: f64,
}

impl CheckResult {
    fn new(name: &'static str) -> Self {
        CheckResult {
            name,
            evaluations: 0,
            worst_slack: f64::INFINITY,
            lhs_at_worst: 0.0,
            rhs_at_worst: 0.0,
            max_lhs: 0.0,
            max_rhs: 0.0,
        }
    }

    fn record(&mut self, lhs: f64, rhs: f64) {
        self.record_slack(lhs, rhs, rhs - lhs);
    }

    fn record_slack(&mut self, lhs: f64, rhs: f64, slack: f64) {
        self.evaluations += 1;
        self.max_lhs = self.max_lhs.max(lhs);
        self.max_rhs = self.max_rhs.max(rhs);
        // NaN slack must register as a failure
        if !(slack >= self.worst_slack) {
            self.worst_slack = if slack.is_nan() { f64::NEG_INFINITY } else { slack };
            self.lhs_at_worst = lhs;
            self.rhs_at_worst = rhs;
        }
    }

    pub fn passed(&self) -> bool {
        self.worst_slack >= -AUDIT_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub steps: u64,
    pub snapshots: usize,
    pub checks: Vec<CheckResult>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,evaluations,worst_slack,lhs_at_worst,rhs_at_worst,max_lhs,max_rhs,passed\n");
        for c in &self.checks {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.name,
                c.evaluations,
                c.worst_slack,
                c.lhs_at_worst,
                c.rhs_at_worst,
                c.max_lhs,
                c.max_rhs,
                u8::from(c.passed())
            )
            .unwrap();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("audit over {} steps, {} snapshots\n", self.steps, self.snapshots);
        for c in &self.checks {
            writeln!(
                out,
                "  {:<6} {:<26} n={:<7} worst slack {:+.3e} (lhs {:.6e}, rhs {:.6e})",
                if c.passed() { "ok" } else { "FAIL" },
                c.name,
                c.evaluations,
                c.worst_slack,
                c.lhs_at_worst,
                c.rhs_at_worst
            )
            .unwrap();
        }
        writeln!(out, "result: {}", if self.passed() { "pass" } else { "FAIL" }).unwrap();
        out
    }
}

fn validate(trace: &AuditTrace) -> Result<(), MetricsError> {
    let missing = |m: String| Err(MetricsError::MissingSnapshots(m));
    let total = trace.grads.len() as u64;
    if trace.steps.len() as u64 != total {
        return missing(format!("{} step records for {total} gradients", trace.steps.len()));
    }
    match (trace.snapshots.first(), trace.snapshots.last()) {
        (Some(first), Some(last)) => {
            if first.step != 0 {
                return missing(format!("first snapshot is at step {}, not 0", first.step));
            }
            if last.step != total {
                return missing(format!("last snapshot is at step {}, run has {total} steps", last.step));
            }
        }
        _ => return missing("no snapshots".into()),
    }
    for w in trace.snapshots.windows(2) {
        if w[1].step <= w[0].step || w[1].step - w[0].step > trace.stride.max(1) {
            return missing(format!("gap between snapshots at steps {} and {}", w[0].step, w[1].step));
        }
    }
    let n = trace.snapshots[0].x.len();
    for s in &trace.snapshots {
        for v in [&s.x, &s.m, &s.v, &s.vhat, &s.gamma] {
            if v.len() != n {
                return Err(MetricsError::LengthMismatch { expected: n, got: v.len() });
            }
        }
    }
    if let Some(g) = trace.grads.iter().find(|g| g.len() != n) {
        return Err(MetricsError::LengthMismatch { expected: n, got: g.len() });
    }
    Ok(())
}

/// Checks every recorded inequality:
///
/// * `step_length`: `‖x^(k+1) - x^(k)‖ ≤ α_k ‖m^(k) ⊘ √v̂^(k)‖`
/// * `mixture_distance`, `mixture_energy`: the distance from the read
///   snapshot to `x^(k)` against the path length and `τ`-scaled path energy
/// * `scaled_grad`: `‖g^(j) ⊘ √v̂^(k)‖ ≤ √(‖g^(j)‖₀/(1-β₂))` for
///   `j = k` every step and all `j ≤ k` at snapshots
/// * `scaled_moment`: `‖m ⊘ √v̂‖ ≤ (1-β₁)/√(1-β₂) · S'`
/// * `scaled_moment_sq`: `‖m ⊘ √v̂‖² ≤ (1-β₁)/(1-β₂) · S`
/// * `moment_envelope`, `vhat_envelope`: `|m_i| ≤ Γ_i`, `v̂_i ≤ Γ_i²`
/// * `vhat_monotone`, `vhat_ge_v`
///
/// Snapshot-level quantities (`Γ`, `S`, `S'`) are recomputed from the stored
/// gradients rather than trusted from the recording.
pub fn invariant_audit(trace: &AuditTrace) -> Result<AuditReport, MetricsError> {
    validate(trace)?;
    let (b1, b2) = (trace.beta1, trace.beta2);
    let mut step_len = CheckResult::new("step_length");
    let mut mix_d = CheckResult::new("mixture_distance");
    let mut mix_e = CheckResult::new("mixture_energy");
    let mut l4a = CheckResult::new("scaled_grad");
    let mut l4b = CheckResult::new("scaled_moment");
    let mut l4c = CheckResult::new("scaled_moment_sq");
    let mut l6m = CheckResult::new("moment_envelope");
    let mut l6v = CheckResult::new("vhat_envelope");
    let mut mono = CheckResult::new("vhat_monotone");
    let mut ge_v = CheckResult::new("vhat_ge_v");

    for r in &trace.steps {
        step_len.record(r.step_norm, r.step_bound);
        let m = &r.mixture;
        mix_d.record(m.distance, m.path_length);
        mix_e.record(m.distance_sq, m.tau_path_energy);
        l4a.record(r.scaled_grad, r.scaled_grad_bound);
        mono.record_slack(0.0, r.vhat_increment, r.vhat_increment);
        ge_v.record_slack(0.0, r.vhat_minus_v, r.vhat_minus_v);
    }

    let n = trace.snapshots[0].x.len();
    let mut gamma = vec![0.0; n];
    let (mut s, mut s_prime) = (0.0, 0.0);
    let mut consumed = 0usize;
    let mut prev_vhat: Option<&DenseVec> = None;
    for snap in &trace.snapshots {
        while (consumed as u64) < snap.step {
            let g = &trace.grads[consumed];
            for (gm, gi) in gamma.iter_mut().zip(g.iter()) {
                *gm = f64::max(*gm, gi.abs());
            }
            let nnz = g.nnz() as f64;
            s = b1 * s + nnz;
            s_prime = b1 * s_prime + nnz.sqrt();
            consumed += 1;
        }
        let vhat = &snap.vhat;
        for g in &trace.grads[..consumed] {
            let lhs = scaled_norm_sq_strict(g, vhat).sqrt();
            l4a.record(lhs, (g.nnz() as f64 / (1.0 - b2)).sqrt());
        }
        let sm = scaled_norm_sq_strict(&snap.m, vhat);
        l4b.record(sm.sqrt(), (1.0 - b1) / (1.0 - b2).sqrt() * s_prime);
        l4c.record(sm, (1.0 - b1) / (1.0 - b2) * s);
        for i in 0..n {
            l6m.record(snap.m[i].abs(), gamma[i]);
            l6v.record(vhat[i], gamma[i] * gamma[i]);
        }
        let d = min_diff(vhat, &snap.v);
        ge_v.record_slack(0.0, d, d);
        if let Some(p) = prev_vhat {
            let d = min_diff(vhat, p);
            mono.record_slack(0.0, d, d);
        }
        prev_vhat = Some(vhat);
    }

    Ok(AuditReport {
        steps: trace.grads.len() as u64,
        snapshots: trace.snapshots.len(),
        checks: vec![step_len, mix_d, mix_e, l4a, l4b, l4c, l6m, l6v, mono, ge_v],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::LrSchedule;
    use crate::problems::{Problem, Quadratic};
    use crate::runtime::{run_sim, DelayModel, RunConfig};
    use crate::staleness::{ReadMode, StalenessPolicy};
    use crate::vectormath::BoxConstraint;

    fn recorded(tau: u64, steps: u64, stride: u64) -> AuditTrace {
        let q = Quadratic::new(DenseVec::from(vec![1.0, 2.0, 0.0, 0.5]), DenseVec::from(vec![1.0, -1.0, 0.0, 0.3]))
            .unwrap()
            .with_noise(8, 0.5, 2)
            .unwrap()
            .with_bounds(BoxConstraint::uniform(4, -1.0, 1.0).unwrap())
            .unwrap();
        let hp = HyperParams::new(0.9, 0.99, LrSchedule::InvSqrtK { alpha: 0.2 }, 0.0).unwrap();
        let policy = StalenessPolicy { tau_max: tau, mode: ReadMode::Inconsistent };
        let cfg = RunConfig::sim(steps, 2, policy, DelayModel::UniformInt(tau), 9);
        let mut rec = AuditRecorder::new(&hp, stride);
        run_sim(&q, &hp, &cfg, q.initial_point(0), &mut rec).unwrap();
        rec.into_trace()
    }

    #[test]
    fn clean_run_passes() {
        let t = recorded(3, 200, 10);
        assert_eq!(t.snapshots.len(), 21);
        let report = invariant_audit(&t).unwrap();
        assert!(report.passed(), "{}", report.to_text());
        assert_eq!(report.checks.len(), 10);
        assert!(report.to_csv().lines().count() == 11);
    }

    #[test]
    fn zero_delay_mixture_sides_are_zero() {
        let report = invariant_audit(&recorded(0, 50, 7)).unwrap();
        for name in ["mixture_distance", "mixture_energy"] {
            let c = report.check(name).unwrap();
            assert_eq!((c.max_lhs, c.max_rhs), (0.0, 0.0));
            assert!(c.passed());
        }
    }

    #[test]
    fn decremented_vhat_is_caught() {
        let mut t = recorded(2, 60, 10);
        let k = t.snapshots.len() - 2;
        t.snapshots[k].vhat[0] += 1.0;
        let report = invariant_audit(&t).unwrap();
        assert!(!report.check("vhat_monotone").unwrap().passed());
        assert!(!report.passed());
    }

    #[test]
    fn missing_snapshots_are_an_error() {
        let mut t = recorded(1, 40, 5);
        t.snapshots.remove(3);
        assert!(matches!(invariant_audit(&t), Err(MetricsError::MissingSnapshots(_))));
        let mut t = recorded(1, 40, 5);
        t.snapshots.pop();
        assert!(matches!(invariant_audit(&t), Err(MetricsError::MissingSnapshots(_))));
        let mut t = recorded(1, 40, 5);
        t.snapshots.clear();
        assert!(invariant_audit(&t).is_err());
    }

    #[test]
    fn nan_slack_fails() {
        let mut c = CheckResult::new("x");
        c.record(1.0, 2.0);
        c.record(f64::NAN, 2.0);
        assert!(!c.passed());
    }
}
