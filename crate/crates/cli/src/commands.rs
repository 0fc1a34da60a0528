use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use apam_core::metrics::{
    bound_cvx_delay, bound_cvx_nodelay, bound_ncvx, estimate_inputs, invariant_audit, ncvx_sample_index, AuditRecorder,
    AuditReport, BoundInputs, BoundKind, ConvexSchedule, GammaPhiTracker, NcvxSetting, SuppliedInputs,
};
use apam_core::optimizer::OptimizerState;
use apam_core::problems::{
    grad_check, load_libsvm, solve_reference, synth_classification, synth_multiclass, synth_sparse_classification,
    Dataset, Logistic, Mlp2, Quadratic,
};
use apam_core::rng::{derive_seed, splitmix64};
use apam_core::runtime::ApplyEvent;
use apam_core::{run, BoxConstraint, DelayModel, DenseVec, LrSchedule, Mode, Problem, RunError, RunHooks, RunTrace};
use log::info;

use crate::config::{DataSource, ExperimentConfig, ProblemKind, ProblemSpec};

pub struct Built {
    pub problem: Box<dyn Problem>,
    /// Exact `F*` when known in closed form.
    pub optimum: Option<f64>,
    /// Exact smoothness constant when known.
    pub smoothness: Option<f64>,
}

fn dataset(spec: &ProblemSpec) -> Result<Dataset> {
    Ok(match &spec.data {
        DataSource::File(path) => load_libsvm(path).with_context(|| format!("loading {}", path.display()))?,
        DataSource::Synthetic => match spec.kind {
            ProblemKind::Mlp2 => synth_multiclass(spec.samples, spec.features, spec.classes, spec.data_seed),
            _ if spec.nnz > 0 => synth_sparse_classification(spec.samples, spec.features, spec.nnz, spec.data_seed),
            _ => synth_classification(spec.samples, spec.features, spec.separable, spec.data_seed),
        },
    })
}

/// Uniform in `[lo, hi)` from a hashed counter.
fn hashed_uniform(seed: u64, i: usize, lo: f64, hi: f64) -> f64 {
    let u = (splitmix64(seed ^ splitmix64(i as u64)) >> 11) as f64 / (1u64 << 53) as f64;
    lo + (hi - lo) * u
}

fn quadratic(spec: &ProblemSpec) -> Result<Quadratic> {
    if spec.data != DataSource::Synthetic {
        bail!("quadratic problems are generated; problem.data must be synthetic");
    }
    let n = spec.features;
    let seed = derive_seed(spec.data_seed, 1);
    let a: DenseVec =
        (0..n).map(|i| if i < spec.linear_coords { 0.0 } else { hashed_uniform(seed, 2 * i, 0.5, 2.0) }).collect();
    let b: DenseVec = (0..n).map(|i| hashed_uniform(seed, 2 * i + 1, -1.0, 1.0)).collect();
    let mut q = Quadratic::new(a, b)?;
    if spec.noise_samples > 0 {
        q = q.with_noise(spec.noise_samples, spec.noise_scale, spec.data_seed)?;
    }
    if let Some(r) = spec.box_radius {
        q = q.with_bounds(BoxConstraint::uniform(n, -r, r)?)?;
    }
    if q.minimizer().is_none() {
        bail!("quadratic with linear coordinates needs problem.box");
    }
    Ok(q)
}

pub fn build_problem(spec: &ProblemSpec) -> Result<Built> {
    match spec.kind {
        ProblemKind::Quadratic => {
            let q = quadratic(spec)?;
            Ok(Built { optimum: q.optimum_value(), smoothness: Some(q.lipschitz()), problem: Box::new(q) })
        }
        ProblemKind::Logistic => {
            let data = dataset(spec)?;
            let n = data.n_features;
            let mut p = Logistic::new(Arc::new(data), spec.l2)?;
            if let Some(r) = spec.box_radius {
                p = p.with_bounds(BoxConstraint::uniform(n, -r, r)?)?;
            }
            Ok(Built { problem: Box::new(p), optimum: None, smoothness: None })
        }
        ProblemKind::Mlp2 => {
            if spec.box_radius.is_some() {
                bail!("problem.box is not supported for mlp2");
            }
            let p = Mlp2::new(Arc::new(dataset(spec)?), spec.hidden)?;
            Ok(Built { problem: Box::new(p), optimum: None, smoothness: None })
        }
    }
}

/// Runs the hook only when present.
struct Maybe<H>(Option<H>);

impl<H: RunHooks> RunHooks for Maybe<H> {
    fn on_start(&mut self, state: &OptimizerState) -> Result<(), RunError> {
        self.0.as_mut().map_or(Ok(()), |h| h.on_start(state))
    }

    fn on_apply(&mut self, ev: &ApplyEvent<'_>) -> Result<(), RunError> {
        self.0.as_mut().map_or(Ok(()), |h| h.on_apply(ev))
    }

    fn on_drop(&mut self, index: u64, msg: &apam_core::GradMsg, tau: u64) -> Result<(), RunError> {
        self.0.as_mut().map_or(Ok(()), |h| h.on_drop(index, msg, tau))
    }
}

fn run_experiment<H: RunHooks>(cfg: &ExperimentConfig, built: &Built, hooks: &mut H) -> Result<RunTrace> {
    let p = built.problem.as_ref();
    let x0 = p.initial_point(cfg.run.master_seed);
    info!(
        "{} run: {} dims, {} workers, {} iterations",
        cfg.run.mode.name(),
        p.dim(),
        cfg.run.workers,
        cfg.run.iterations
    );
    let mut trace = run(p, &cfg.hp, &cfg.run, x0, hooks)?;
    trace.push_meta("problem", cfg.problem.kind.name());
    Ok(trace)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or("trace".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn summary(trace: &RunTrace, final_value: f64) -> String {
    format!(
        "applied {} dropped {} unconsumed {} F(x) {:.6e} mean tau {:.2} max tau {} elapsed {:.3}s",
        trace.applied,
        trace.dropped,
        trace.unconsumed,
        final_value,
        trace.mean_applied_tau().unwrap_or(0.0),
        trace.max_applied_tau().unwrap_or(0),
        trace.elapsed.as_secs_f64()
    )
}

fn audit_failure_text(report: &AuditReport) -> String {
    report
        .failures()
        .iter()
        .map(|c| format!("{} (worst slack {:.3e})", c.name, c.worst_slack))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    let built = build_problem(&cfg.problem)?;
    let p = built.problem.as_ref();
    let audit = cfg.audit.enabled.then(|| AuditRecorder::new(&cfg.hp, cfg.audit.stride));
    let tracker = cfg.audit.phi.then(|| GammaPhiTracker::new(p.dim()).with_phi(p, cfg.audit.stride));
    let mut hooks = (Maybe(audit), Maybe(tracker));
    let mut trace = run_experiment(cfg, &built, &mut hooks)?;
    let (Maybe(audit), Maybe(tracker)) = hooks;
    let final_value = p.full_value(&trace.final_state.x)?;
    trace.push_meta("final_objective", final_value);
    if let Some(t) = &tracker {
        trace.push_meta("gamma_inf", t.gamma.norm_inf());
        if let Some(phi) = &t.phi {
            trace.push_meta("phi_inf", phi.norm_inf());
        }
    }
    let report = audit.map(|a| invariant_audit(&a.into_trace())).transpose()?;
    if let Some(r) = &report {
        trace.push_meta("audit", if r.passed() { "pass" } else { "fail" });
        let path = sibling(&cfg.output, ".audit.csv");
        write_file(&path, &r.to_csv())?;
        println!("audit report: {}", path.display());
    }
    write_file(&cfg.output, &trace.to_csv_string())?;
    println!("trace: {}", cfg.output.display());
    println!("{}", summary(&trace, final_value));
    println!("staleness histogram: {}", trace.histogram_summary());
    if let Some(r) = report.filter(|r| !r.passed()) {
        bail!("invariant audit failed: {}", audit_failure_text(&r));
    }
    Ok(())
}

pub fn parse_tau_list(s: &str) -> Result<Vec<u64>> {
    let taus = s
        .split(',')
        .map(|t| t.trim().parse::<u64>().with_context(|| format!("bad staleness value {t:?}")))
        .collect::<Result<Vec<_>>>()?;
    if taus.is_empty() {
        bail!("empty staleness list");
    }
    Ok(taus)
}

pub fn simulate(cfg: &ExperimentConfig, taus: &[u64], out_dir: Option<&Path>, tau_max: Option<u64>) -> Result<()> {
    let built = build_problem(&cfg.problem)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
    let stem = cfg.output.file_stem().map_or("trace".into(), |s| s.to_string_lossy().into_owned());
    let largest = taus.iter().copied().max().unwrap_or(0);
    for &tau in taus {
        let mut c = cfg.clone();
        c.run.mode = Mode::Sim;
        c.run.delay_model = DelayModel::Fixed(tau);
        c.run.policy.tau_max = tau_max.unwrap_or(cfg.run.policy.tau_max.max(largest));
        let trace = run_experiment(&c, &built, &mut ())?;
        let f = built.problem.full_value(&trace.final_state.x)?;
        let path = dir.join(format!("{stem}_tau{tau}.csv"));
        write_file(&path, &trace.to_csv_string())?;
        println!("tau {tau}: {} -> {}", summary(&trace, f), path.display());
    }
    Ok(())
}

pub fn verify(cfg: &ExperimentConfig, seeds: u64) -> Result<()> {
    let built = build_problem(&cfg.problem)?;
    let mut failed = Vec::new();
    for i in 0..seeds {
        let mut c = cfg.clone();
        c.run.master_seed = cfg.run.master_seed.wrapping_add(i);
        let mut rec = AuditRecorder::new(&c.hp, c.audit.stride);
        let trace = run_experiment(&c, &built, &mut rec)?;
        let report = invariant_audit(&rec.into_trace())?;
        let mut problems = Vec::new();
        if !report.passed() {
            problems.push(audit_failure_text(&report));
        }
        if trace.max_applied_tau().unwrap_or(0) > c.run.policy.tau_max {
            problems.push(format!("applied staleness {} above tau_max", trace.max_applied_tau().unwrap_or(0)));
        }
        if trace.produced != trace.applied + trace.dropped + trace.unconsumed + trace.transport_drops {
            problems.push("gradient accounting does not balance".into());
        }
        let worst = report.checks.iter().map(|c| c.worst_slack).fold(f64::INFINITY, f64::min);
        if problems.is_empty() {
            println!(
                "seed {}: pass ({} steps, {} checks, worst slack {worst:.3e})",
                c.run.master_seed,
                report.steps,
                report.checks.len()
            );
        } else {
            println!("seed {}: FAIL {}", c.run.master_seed, problems.join("; "));
            failed.push(c.run.master_seed);
        }
    }
    if !failed.is_empty() {
        bail!("verification failed for seeds {failed:?}");
    }
    println!("verify: all {seeds} seeds pass");
    Ok(())
}

pub fn gradcheck(cfg: &ExperimentConfig, name: &str, points: u64, h: f64, tol: f64) -> Result<bool> {
    let built = build_problem(&cfg.problem)?;
    let p = built.problem.as_ref();
    let mut worst = 0.0f64;
    for i in 0..points {
        let x = p.initial_point(cfg.run.master_seed.wrapping_add(i));
        worst = worst.max(grad_check(p, &x, h)?);
    }
    let ok = worst <= tol;
    println!(
        "{name}: {} ({} dims, {points} points) max relative error {worst:.3e} {}",
        cfg.problem.kind.name(),
        p.dim(),
        if ok { "pass" } else { "FAIL" }
    );
    Ok(ok)
}

/// `α` of the constant-in-`k` schedule that matches `schedule` over
/// `span` steps, if the schedule is constant in `k`.
fn flat_alpha(schedule: &LrSchedule, k: u64, span: u64) -> Option<f64> {
    match *schedule {
        LrSchedule::Constant { alpha } => Some(alpha * (span as f64).sqrt()),
        LrSchedule::ConstOverSqrtK { alpha, .. } => Some(alpha * (span as f64 / k as f64).sqrt()),
        LrSchedule::InvSqrtK { .. } => None,
    }
}

/// Online `Σ_k w_k x^(k)` with `w_k ∝ Σ_{j≥k} α_j β₁^{j-k}`.
struct ErgodicAccumulator {
    beta1: f64,
    y: DenseVec,
    sum: DenseVec,
    norm: f64,
    geo: f64,
}

impl RunHooks for ErgodicAccumulator {
    fn on_apply(&mut self, ev: &ApplyEvent<'_>) -> Result<(), RunError> {
        self.geo = 1.0 + self.beta1 * self.geo;
        self.norm += ev.alpha * self.geo;
        for ((y, s), x) in self.y.iter_mut().zip(self.sum.iter_mut()).zip(ev.before.x.iter()) {
            *y = self.beta1 * *y + x;
            *s += ev.alpha * *y;
        }
        Ok(())
    }
}

impl ErgodicAccumulator {
    fn average(&self) -> Option<DenseVec> {
        (self.norm > 0.0).then(|| self.sum.scale(1.0 / self.norm))
    }
}

/// Keeps `x^(target)`.
struct IterateAt {
    target: u64,
    x: Option<DenseVec>,
}

impl RunHooks for IterateAt {
    fn on_apply(&mut self, ev: &ApplyEvent<'_>) -> Result<(), RunError> {
        if ev.before.k + 1 == self.target {
            self.x = Some(ev.after.x.clone());
        }
        Ok(())
    }
}

pub fn bounds(cfg: &ExperimentConfig, overrides: SuppliedInputs) -> Result<()> {
    let built = build_problem(&cfg.problem)?;
    let p = built.problem.as_ref();
    let n = p.dim();
    let k = cfg.run.iterations;
    let k0 = cfg.k0().min(k);
    let alphas = cfg.hp.schedule.sequence(k);
    let sample = if k >= 2 { Some(ncvx_sample_index(&alphas, k0, k, cfg.run.master_seed)?) } else { None };
    let mut hooks = (
        (
            ErgodicAccumulator {
                beta1: cfg.hp.beta1,
                y: DenseVec::zeros(n),
                sum: DenseVec::zeros(n),
                norm: 0.0,
                geo: 0.0,
            },
            IterateAt { target: sample.unwrap_or(0), x: None },
        ),
        GammaPhiTracker::new(n).capture_vhat_at(k0.saturating_sub(1)),
    );
    let mut trace = run_experiment(cfg, &built, &mut hooks)?;
    let ((ergodic, at_sample), tracker) = hooks;

    let supplied = SuppliedInputs {
        l: overrides.l.or(cfg.supplied.l).or(built.smoothness),
        c_f: overrides.c_f.or(cfg.supplied.c_f),
        d_inf: overrides.d_inf.or(cfg.supplied.d_inf),
    };
    let est = estimate_inputs(&trace, Some(&tracker), &supplied, p.bounds());
    let k_applied = trace.applied;
    let mut lines: Vec<(String, String)> = est.describe();
    lines.push(("estimate.K_applied".into(), k_applied.to_string()));
    lines.push(("estimate.k0".into(), k0.to_string()));

    let final_value = p.full_value(&trace.final_state.x)?;
    lines.push(("empirical.F_final".into(), final_value.to_string()));
    let fstar = match built.optimum {
        Some(f) => Some(f),
        None if cfg.problem.kind.is_convex() => {
            let r = solve_reference(p, trace.final_state.x.clone(), 5000, 1e-9)?;
            Some(r.value.min(final_value))
        }
        None => None,
    };
    if let (Some(fs), Some(xbar)) = (fstar, ergodic.average()) {
        lines.push(("empirical.F_star".into(), fs.to_string()));
        lines.push(("empirical.ergodic_gap".into(), (p.full_value(&xbar)? - fs).to_string()));
    }
    lines.push(("empirical.grad_norm_sq_final".into(), p.full_grad(&trace.final_state.x)?.norm_sq().to_string()));
    if let (Some(r), Some(x)) = (sample, &at_sample.x) {
        lines.push(("empirical.sample_index".into(), r.to_string()));
        lines.push(("empirical.grad_norm_sq_sample".into(), p.full_grad(x)?.norm_sq().to_string()));
    }

    let mut echoed = Vec::new();
    let mut eval = |name: &str, bi: Result<BoundInputs, String>, f: &dyn Fn(&BoundInputs) -> Result<f64, String>| {
        let value = bi.and_then(|bi| {
            let v = f(&bi)?;
            if echoed.is_empty() {
                echoed = bi.echo();
            }
            Ok(v)
        });
        (format!("bound.{name}"), value.map_or_else(|e| format!("n/a ({e})"), |v| v.to_string()))
    };
    let inputs = |kind, alpha: Option<f64>| {
        est.to_bound_inputs(kind, &cfg.hp, k_applied, k0)
            .map(|bi| BoundInputs { alpha: alpha.unwrap_or(bi.alpha), ..bi })
    };
    let mut results = Vec::new();
    if cfg.problem.kind.is_convex() {
        let (sched, alpha) = match cfg.hp.schedule {
            LrSchedule::InvSqrtK { alpha } => (ConvexSchedule::InvSqrtK, Some(alpha)),
            s => (ConvexSchedule::ConstOverSqrtK, flat_alpha(&s, k_applied, k_applied)),
        };
        results.push(eval("convex_nodelay", inputs(BoundKind::ConvexNoDelay, alpha), &|bi| {
            bound_cvx_nodelay(bi, sched).map_err(|e| e.to_string())
        }));
        let delay_inputs = match sched {
            ConvexSchedule::ConstOverSqrtK => inputs(BoundKind::ConvexDelay, alpha),
            ConvexSchedule::InvSqrtK => Err("needs a schedule constant in k".into()),
        };
        results.push(eval("convex_delay", delay_inputs, &|bi| bound_cvx_delay(bi).map_err(|e| e.to_string())));
    }
    let (setting, alpha) = match cfg.hp.schedule {
        LrSchedule::InvSqrtK { alpha } => (NcvxSetting::Two, Some(alpha)),
        s => (NcvxSetting::One, flat_alpha(&s, k_applied, (k_applied + 1).saturating_sub(k0))),
    };
    let e = est.e_vtilde_inv_l1.value.unwrap_or(f64::INFINITY);
    let ncvx = |bi: &BoundInputs| bound_ncvx(bi, setting, e).map_err(|e| e.to_string());
    results.push(eval("nonconvex", inputs(BoundKind::Nonconvex, alpha), &|bi| ncvx(bi).map(|b| b.bound)));
    results.push(eval("nonconvex_at_cap", inputs(BoundKind::Nonconvex, alpha), &|bi| ncvx(bi).map(|b| b.bound_at_cap)));
    lines.extend(results);
    lines.extend(echoed);

    for (key, value) in &lines {
        println!("{key} = {value}");
        trace.push_meta(key.clone(), value);
    }
    write_file(&cfg.output, &trace.to_csv_string())?;
    println!("trace: {}", cfg.output.display());
    Ok(())
}
