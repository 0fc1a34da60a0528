use std::sync::Arc;

use apam_core::metrics::{
    bound_cvx_delay, bound_cvx_nodelay, bound_ncvx, ergodic_average, ergodic_weights, estimate_inputs, invariant_audit,
    AuditRecorder, BoundInputs, ConvexSchedule, GammaPhiTracker, NcvxSetting, SuppliedInputs,
};
use apam_core::problems::{synth_classification, synth_multiclass, Dataset, Logistic, Mlp2};
use apam_core::runtime::{run_sim, ApplyEvent, DelayModel, RunConfig, RunError, RunHooks};
use apam_core::{DenseVec, HyperParams, LrSchedule, OptimizerState, Problem, ReadMode, SparseVec, StalenessPolicy};
use proptest::prelude::*;

fn hp(eps: f64) -> HyperParams {
    HyperParams::new(0.9, 0.999, LrSchedule::InvSqrtK { alpha: 0.05 }, eps).unwrap()
}

fn sim_cfg(steps: u64, tau: u64, mode: ReadMode, seed: u64) -> RunConfig {
    RunConfig {
        workers: 3,
        ..RunConfig::sim(steps, 8, StalenessPolicy { tau_max: tau, mode }, DelayModel::UniformInt(tau), seed)
    }
}

fn logistic(seed: u64) -> Logistic {
    Logistic::new(Arc::new(synth_classification(120, 6, false, seed)), 1e-3).unwrap()
}

/// Feature 2 appears only in the last few samples, so its `v̂` turns
/// positive late (or never, for small batches).
fn late_feature_logistic() -> Logistic {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..60 {
        let y = if i % 2 == 0 { 1 } else { -1 };
        let mut idx = vec![0, 1];
        let mut val = vec![y as f64 * 0.5 + 0.1 * i as f64 / 60.0, 1.0];
        if i >= 57 {
            idx.push(2);
            val.push(2.0);
        }
        rows.push(SparseVec::new(idx, val).unwrap());
        labels.push(y);
    }
    Logistic::new(Arc::new(Dataset::new(rows, labels, 3).unwrap()), 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ergodic_weights_are_a_distribution(alphas in prop::collection::vec(1e-4f64..10.0, 1..60), beta1 in 0.0f64..0.999) {
        let w = ergodic_weights(&alphas, beta1).unwrap();
        prop_assert_eq!(w.len(), alphas.len());
        prop_assert!(w.iter().all(|x| *x > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn ergodic_weights_match_double_sum(alphas in prop::collection::vec(0.01f64..2.0, 1..25), beta1 in 0.0f64..0.99) {
        let k = alphas.len();
        let raw: Vec<f64> = (0..k)
            .map(|i| (i..k).map(|j| alphas[j] * beta1.powi((j - i) as i32)).sum())
            .collect();
        let total: f64 = raw.iter().sum();
        let w = ergodic_weights(&alphas, beta1).unwrap();
        for (a, b) in w.iter().zip(&raw) {
            prop_assert!((a - b / total).abs() <= 1e-12);
        }
    }

    #[test]
    fn ergodic_average_matches_direct_sum(
        traj in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..20),
        beta1 in 0.0f64..0.95,
    ) {
        let xs: Vec<DenseVec> = traj.iter().map(|v| DenseVec::from(v.clone())).collect();
        let w = ergodic_weights(&vec![1.0; xs.len()], beta1).unwrap();
        let avg = ergodic_average(&xs, &w).unwrap();
        for i in 0..3 {
            let direct: f64 = xs.iter().zip(&w).map(|(x, wk)| wk * x[i]).sum();
            prop_assert!((avg[i] - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn delay_bound_without_delay_is_the_plain_bound(
        n in 1usize..1000, d in 0.01f64..10.0, g1 in 0.0f64..100.0, gi in 0.0f64..10.0, l in 0.0f64..50.0,
        s in 0.0f64..100.0, b1 in 0.0f64..0.99, b2 in 0.0f64..0.9999, alpha in 1e-4f64..2.0, k in 1u64..10_000_000,
    ) {
        let bi = BoundInputs { n, d_inf: d, g1, g_inf: gi, l, s, tau: 0, c_f: 1.0, c: 1.0, beta1: b1, beta2: b2, alpha, k, k0: 1 };
        prop_assert_eq!(bound_cvx_delay(&bi).unwrap(), bound_cvx_nodelay(&bi, ConvexSchedule::ConstOverSqrtK).unwrap());
        let with_delay = bound_cvx_delay(&BoundInputs { tau: 3, ..bi }).unwrap();
        prop_assert!(with_delay >= bound_cvx_delay(&bi).unwrap());
    }

    #[test]
    fn ncvx_bound_dominates_c1_and_grows_with_tau(
        tau in 0u64..40, l in 0.0f64..5.0, e in 0.0f64..1e4, c in 1e-3f64..2.0, b1 in 0.0f64..0.95,
    ) {
        let bi = BoundInputs {
            n: 10, d_inf: 1.0, g1: 1.0, g_inf: 1.5, l, s: 10.0, tau, c_f: 2.0, c,
            beta1: b1, beta2: 0.99, alpha: 0.1, k: 400, k0: 200,
        };
        for setting in [NcvxSetting::One, NcvxSetting::Two] {
            let r = bound_ncvx(&bi, setting, e).unwrap();
            prop_assert!(r.bound.is_finite() && r.bound >= r.c1);
            prop_assert!(r.e_used <= 10.0 / c);
            prop_assert!(r.bound <= r.bound_at_cap);
            let next = bound_ncvx(&BoundInputs { tau: tau + 1, ..bi }, setting, e).unwrap();
            prop_assert!(next.bound >= r.bound);
        }
    }
}

/// Checks the tracker invariants after every applied step.
struct TrackerWatch<'a> {
    tracker: GammaPhiTracker<'a>,
    prev: Option<(DenseVec, Option<DenseVec>, DenseVec)>,
    violations: Vec<String>,
}

impl RunHooks for TrackerWatch<'_> {
    fn on_start(&mut self, s: &OptimizerState) -> Result<(), RunError> {
        self.tracker.on_start(s)
    }

    fn on_apply(&mut self, ev: &ApplyEvent<'_>) -> Result<(), RunError> {
        self.tracker.on_apply(ev)?;
        let t = &self.tracker;
        let k = ev.before.k;
        for i in 0..t.gamma.len() {
            if !(t.vtilde[i] >= ev.after.vhat[i] && ev.after.vhat[i] >= ev.after.v[i]) {
                self.violations.push(format!("step {k}: vtilde >= vhat >= v fails at {i}"));
            }
            if t.gamma[i] < ev.msg.g[i].abs() {
                self.violations.push(format!("step {k}: gamma below |g| at {i}"));
            }
        }
        if let Some((g, phi, vt)) = &self.prev {
            for i in 0..g.len() {
                if t.gamma[i] < g[i] || t.vtilde[i] < vt[i] {
                    self.violations.push(format!("step {k}: gamma or vtilde decreased at {i}"));
                }
                if let (Some(p), Some(q)) = (phi, &t.phi) {
                    if q[i] < p[i] {
                        self.violations.push(format!("step {k}: phi decreased at {i}"));
                    }
                }
            }
        }
        self.prev = Some((t.gamma.clone(), t.phi.clone(), t.vtilde.clone()));
        Ok(())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tracker_is_monotone_every_step(seed in 0u64..1000, tau in 0u64..6, stride in 1u64..5) {
        let p = logistic(seed);
        let mut watch = TrackerWatch {
            tracker: GammaPhiTracker::new(p.dim()).with_phi(&p, stride),
            prev: None,
            violations: Vec::new(),
        };
        let trace = run_sim(&p, &hp(0.0), &sim_cfg(120, tau, ReadMode::Inconsistent, seed), p.initial_point(seed), &mut watch).unwrap();
        prop_assert!(watch.violations.is_empty(), "{:?}", watch.violations);
        prop_assert_eq!(watch.tracker.steps, trace.applied);
    }

    #[test]
    fn audit_passes_on_random_delayed_runs(seed in 0u64..1000, tau in 0u64..8, inconsistent in any::<bool>()) {
        let p = logistic(seed);
        let mode = if inconsistent { ReadMode::Inconsistent } else { ReadMode::Consistent };
        let h = hp(0.0);
        let mut rec = AuditRecorder::new(&h, 10);
        run_sim(&p, &h, &sim_cfg(150, tau, mode, seed), p.initial_point(seed), &mut rec).unwrap();
        let report = invariant_audit(&rec.into_trace()).unwrap();
        prop_assert!(report.passed(), "{}", report.to_text());
    }
}

/// Records `v̂^(k)` after every step.
#[derive(Default)]
struct VhatLog(Vec<DenseVec>);

impl RunHooks for VhatLog {
    fn on_apply(&mut self, ev: &ApplyEvent<'_>) -> Result<(), RunError> {
        self.0.push(ev.after.vhat.clone());
        Ok(())
    }
}

#[test]
fn vtilde_matches_definition_on_late_coordinates() {
    let p = late_feature_logistic();
    let h = HyperParams::new(0.9, 0.99, LrSchedule::InvSqrtK { alpha: 0.1 }, 0.0).unwrap();
    let cfg =
        RunConfig::sim(80, 4, StalenessPolicy { tau_max: 0, mode: ReadMode::Consistent }, DelayModel::Fixed(0), 4);
    let mut hooks = (GammaPhiTracker::new(3), VhatLog::default());
    run_sim(&p, &h, &cfg, DenseVec::zeros(3), &mut hooks).unwrap();
    let (tracker, VhatLog(log)) = hooks;
    // oracle: k_i is the first step with v̂_i > 0
    let first: Vec<Option<usize>> = (0..3).map(|i| log.iter().position(|v| v[i] > 0.0)).collect();
    let ki = first[2].expect("feature 2 is eventually sampled");
    assert!(ki > 0, "feature 2 should start at zero");
    for (k, vhat) in log.iter().enumerate() {
        let vt = tracker.vtilde_of(vhat);
        for i in 0..3 {
            let want = match first[i] {
                Some(f) => vhat[i].max(log[f][i]),
                None => vhat[i],
            };
            assert_eq!(vt[i], want, "step {k}, coordinate {i}");
        }
    }
    assert!(tracker.vtilde_of(&log[0])[2] > 0.0);
}

#[test]
fn vtilde_equals_vhat_once_all_positive() {
    let p = logistic(8);
    let h = hp(0.0);
    let k = 200;
    let mut tracker = GammaPhiTracker::new(p.dim()).capture_vhat_at(k);
    let cfg = sim_cfg(k, 2, ReadMode::Consistent, 8);
    let trace = run_sim(&p, &h, &cfg, p.initial_point(1), &mut tracker).unwrap();
    assert_eq!(trace.applied, k);
    assert!(trace.final_state.vhat.iter().all(|v| *v > 0.0));
    assert_eq!(tracker.captured_vtilde().unwrap(), trace.final_state.vhat);
}

/// Records every applied and dropped gradient.
#[derive(Default)]
struct GradLog(Vec<DenseVec>);

impl RunHooks for GradLog {
    fn on_apply(&mut self, ev: &ApplyEvent<'_>) -> Result<(), RunError> {
        self.0.push(ev.msg.g.clone());
        Ok(())
    }

    fn on_drop(&mut self, _: u64, msg: &apam_core::GradMsg, _: u64) -> Result<(), RunError> {
        self.0.push(msg.g.clone());
        Ok(())
    }
}

#[test]
fn estimates_cover_the_gradient_stream() {
    let p = Mlp2::new(Arc::new(synth_multiclass(80, 4, 3, 2)), 5).unwrap();
    let h = hp(0.0);
    let cfg = sim_cfg(150, 4, ReadMode::Consistent, 3);
    let mut hooks = (GammaPhiTracker::new(p.dim()).capture_vhat_at(74), GradLog::default());
    let trace = run_sim(&p, &h, &cfg, p.initial_point(3), &mut hooks).unwrap();
    let (tracker, GradLog(grads)) = hooks;
    assert_eq!(grads.len(), 150);
    let est = estimate_inputs(&trace, Some(&tracker), &SuppliedInputs::default(), p.bounds());
    let g_inf = est.g_inf.value.unwrap();
    for g in &grads {
        assert!(g.iter().all(|v| v.abs() <= g_inf));
    }
    let mean_l1 = grads.iter().map(|g| g.norm_l1()).sum::<f64>() / grads.len() as f64;
    assert!((est.g1.value.unwrap() - mean_l1).abs() <= 1e-12 * mean_l1);
    assert_eq!(est.s.value.unwrap() as usize, grads.iter().map(|g| g.nnz()).max().unwrap());
    assert!(est.tau.value.unwrap() <= 4.0);
    let vt = tracker.captured_vtilde().unwrap();
    let c = vt.iter().fold(f64::INFINITY, |m, v| m.min(v.sqrt()));
    assert_eq!(est.c.value, Some(c));
}

#[test]
fn audit_report_renders() {
    let p = logistic(1);
    let h = hp(1e-8);
    let mut rec = AuditRecorder::new(&h, 5);
    run_sim(&p, &h, &sim_cfg(40, 3, ReadMode::Consistent, 1), p.initial_point(1), &mut rec).unwrap();
    let report = invariant_audit(&rec.into_trace()).unwrap();
    assert!(report.passed());
    let text = report.to_text();
    assert!(text.contains("step_length") && text.ends_with("result: pass\n"));
    let csv = report.to_csv();
    assert!(csv.starts_with("check,evaluations,worst_slack"));
}
