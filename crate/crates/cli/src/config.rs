//! Experiment configuration: flat `section.key = value` lines with `#`
//! comments. Every key has a fixed type; unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use apam_core::metrics::SuppliedInputs;
use apam_core::runtime::Transport;
use apam_core::{DelayModel, HyperParams, LrSchedule, Mode, ReadMode, RunConfig, StalenessPolicy};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub file: Option<PathBuf>,
    /// 1-based line, when the error is tied to one.
    pub line: Option<usize>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{}: ", file.display())?;
        }
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        f.write_str(&self.msg)
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, msg: impl Into<String>) -> ConfigError {
    ConfigError { file: None, line, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Logistic,
    Mlp2,
    Quadratic,
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Logistic => "logistic",
            ProblemKind::Mlp2 => "mlp2",
            ProblemKind::Quadratic => "quadratic",
        }
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self, ProblemKind::Mlp2)
    }
}

impl FromStr for ProblemKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "logistic" => Ok(ProblemKind::Logistic),
            "mlp2" => Ok(ProblemKind::Mlp2),
            "quadratic" => Ok(ProblemKind::Quadratic),
            _ => Err(format!("unknown problem kind {s:?} (expected logistic, mlp2 or quadratic)")),
        }
    }
}

/// `synthetic` or a LIBSVM file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub data: DataSource,
    pub samples: usize,
    pub features: usize,
    pub classes: usize,
    /// Non-zeros per synthetic row; 0 means dense Gaussian data.
    pub nnz: usize,
    pub separable: bool,
    pub data_seed: u64,
    pub l2: f64,
    pub hidden: usize,
    /// Half-width of the box `[-r, r]^n`; `None` is unconstrained.
    pub box_radius: Option<f64>,
    /// Quadratic only: leading coordinates with zero curvature.
    pub linear_coords: usize,
    pub noise_samples: usize,
    pub noise_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditSpec {
    pub enabled: bool,
    pub stride: u64,
    pub phi: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub hp: HyperParams,
    pub run: RunConfig,
    pub output: PathBuf,
    pub audit: AuditSpec,
    pub supplied: SuppliedInputs,
    /// Start of the non-convex averaging window; `None` means `⌈K/2⌉`.
    pub k0: Option<u64>,
}

impl ExperimentConfig {
    pub fn k0(&self) -> u64 {
        self.k0.unwrap_or(self.run.iterations.div_ceil(2)).max(2)
    }
}

fn parse_delay(s: &str) -> Result<DelayModel, String> {
    let (kind, arg) = s
        .split_once(':')
        .ok_or_else(|| format!("delay {s:?} must look like fixed:N, uniform:N or per_worker:a,b,..."))?;
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("bad delay value {t:?}"));
    match kind {
        "fixed" => Ok(DelayModel::Fixed(num(arg)?)),
        "uniform" => Ok(DelayModel::UniformInt(num(arg)?)),
        "per_worker" => Ok(DelayModel::PerWorkerFixed(arg.split(',').map(num).collect::<Result<_, _>>()?)),
        _ => Err(format!("unknown delay model {kind:?}")),
    }
}

fn fmt_delay(d: &DelayModel) -> String {
    match d {
        DelayModel::Fixed(t) => format!("fixed:{t}"),
        DelayModel::UniformInt(t) => format!("uniform:{t}"),
        DelayModel::PerWorkerFixed(v) => {
            let parts: Vec<String> = v.iter().map(u64::to_string).collect();
            format!("per_worker:{}", parts.join(","))
        }
    }
}

fn parse_transport(s: &str) -> Result<Transport, String> {
    if s == "tcp" {
        return Ok(Transport::Tcp);
    }
    if s == "loopback" {
        return Ok(Transport::default());
    }
    let bad = || format!("transport {s:?} must be tcp, loopback or loopback:P,G");
    let rest = s.strip_prefix("loopback:").ok_or_else(bad)?;
    let (p, g) = rest.split_once(',').ok_or_else(bad)?;
    Ok(Transport::Loopback {
        param_latency: p.trim().parse().map_err(|_| bad())?,
        grad_latency: g.trim().parse().map_err(|_| bad())?,
    })
}

fn fmt_transport(t: &Transport) -> String {
    match t {
        Transport::Tcp => "tcp".into(),
        Transport::Loopback { param_latency, grad_latency } => format!("loopback:{param_latency},{grad_latency}"),
    }
}

fn fmt_opt<T: fmt::Display>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), T::to_string)
}

struct Entries {
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(Some(line), format!("expected `section.key = value`, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.split('.').count() != 2 || key.split('.').any(str::is_empty) {
                return Err(err(Some(line), format!("key {key:?} must have the form section.key")));
            }
            if value.is_empty() {
                return Err(err(Some(line), format!("{key} has no value")));
            }
            if let Some((_, first)) = map.insert(key.to_string(), (value.to_string(), line)) {
                return Err(err(Some(line), format!("{key} repeats line {first}")));
            }
        }
        Ok(Entries { map })
    }

    fn get<T: FromStr>(&mut self, key: &str, default: Option<T>) -> Result<(T, Option<usize>), ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.map.remove(key) {
            Some((v, line)) => {
                v.parse::<T>().map(|x| (x, Some(line))).map_err(|e| err(Some(line), format!("{key}: {e}")))
            }
            None => default.map(|d| (d, None)).ok_or_else(|| err(None, format!("missing required key {key}"))),
        }
    }

    fn val<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key, Some(default))?.0)
    }

    fn with<T>(
        &mut self,
        key: &str,
        default: &str,
        f: impl Fn(&str) -> Result<T, String>,
    ) -> Result<(T, Option<usize>), ConfigError> {
        let (raw, line) = self.get::<String>(key, Some(default.to_string()))?;
        f(&raw).map(|v| (v, line)).map_err(|e| err(line, format!("{key}: {e}")))
    }

    fn optional_f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.with(key, "none", |s| {
            if s == "none" {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|e| e.to_string())
            }
        })
        .map(|r| r.0)
    }
}

fn check(cond: bool, line: Option<usize>, msg: impl Into<String>) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(err(line, msg))
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut e = Entries::parse(text)?;

    let kind: ProblemKind = e.get("problem.kind", None)?.0;
    let data = e.with("problem.data", "synthetic", |s| {
        Ok(if s == "synthetic" { DataSource::Synthetic } else { DataSource::File(PathBuf::from(s)) })
    })?;
    let box_radius = e.with("problem.box", "none", |s| {
        if s == "none" {
            return Ok(None);
        }
        let r: f64 = s.parse().map_err(|e| format!("{e}"))?;
        if r > 0.0 && r.is_finite() {
            Ok(Some(r))
        } else {
            Err(format!("box half-width must be positive, got {r}"))
        }
    })?;
    let problem = ProblemSpec {
        kind,
        data: data.0,
        samples: e.val("problem.samples", 1000)?,
        features: e.val("problem.features", 100)?,
        classes: e.val("problem.classes", 3)?,
        nnz: e.val("problem.nnz", 0)?,
        separable: e.val("problem.separable", false)?,
        data_seed: e.val("problem.data_seed", 1)?,
        l2: e.val("problem.l2", 1e-4)?,
        hidden: e.val("problem.hidden", 10)?,
        box_radius: box_radius.0,
        linear_coords: e.val("problem.linear_coords", 0)?,
        noise_samples: e.val("problem.noise_samples", 16)?,
        noise_scale: e.val("problem.noise_scale", 0.5)?,
    };

    let (beta1, l_b1) = e.get::<f64>("optim.beta1", Some(0.9))?;
    check((0.0..1.0).contains(&beta1), l_b1, format!("optim.beta1 = {beta1} is out of range [0, 1)"))?;
    let (beta2, l_b2) = e.get::<f64>("optim.beta2", Some(0.999))?;
    check((0.0..1.0).contains(&beta2), l_b2, format!("optim.beta2 = {beta2} is out of range [0, 1)"))?;
    let (eps, l_eps) = e.get::<f64>("optim.eps", Some(0.0))?;
    check(eps >= 0.0 && eps.is_finite(), l_eps, format!("optim.eps = {eps} must be finite and >= 0"))?;
    let (alpha, l_alpha) = e.get::<f64>("optim.alpha", None)?;
    check(alpha > 0.0 && alpha.is_finite(), l_alpha, format!("optim.alpha = {alpha} must be positive"))?;
    let (iterations, l_iter) = e.get::<u64>("run.iterations", None)?;
    check(iterations > 0, l_iter, "run.iterations must be positive")?;
    let schedule = e.with("optim.schedule", "constant", |s| match s {
        "constant" => Ok(LrSchedule::Constant { alpha }),
        "inv_sqrt_k" => Ok(LrSchedule::InvSqrtK { alpha }),
        "const_over_sqrt_k" => Ok(LrSchedule::ConstOverSqrtK { alpha, horizon: iterations }),
        _ => Err(format!("unknown schedule {s:?} (expected constant, inv_sqrt_k or const_over_sqrt_k)")),
    })?;
    let hp = HyperParams::new(beta1, beta2, schedule.0, eps).map_err(|e| err(schedule.1, e.to_string()))?;

    let mode = e.get::<Mode>("run.mode", Some(Mode::Sim))?.0;
    let (workers, l_w) = e.get::<usize>("run.workers", Some(1))?;
    let (batch_size, l_b) = e.get::<usize>("run.batch_size", Some(64))?;
    check(workers > 0, l_w, "run.workers must be positive")?;
    check(batch_size > 0, l_b, "run.batch_size must be positive")?;
    let read_mode = e.with("run.read_mode", "consistent", |s| match s {
        "consistent" => Ok(ReadMode::Consistent),
        "inconsistent" => Ok(ReadMode::Inconsistent),
        _ => Err(format!("unknown read mode {s:?} (expected consistent or inconsistent)")),
    })?;
    let (delay, l_delay) = e.with("run.delay", "fixed:0", parse_delay)?;
    if let DelayModel::PerWorkerFixed(d) = &delay {
        check(
            d.len() == workers,
            l_delay,
            format!("per_worker delay lists {} workers, run.workers = {workers}", d.len()),
        )?;
    }
    let queue_capacity = e.with("run.queue_capacity", "auto", |s| {
        if s == "auto" {
            return Ok(None);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("queue capacity must be auto or a positive integer, got {s:?}")),
            Ok(c) => Ok(Some(c)),
        }
    })?;
    let run = RunConfig {
        mode,
        workers,
        batch_size,
        iterations,
        policy: StalenessPolicy { tau_max: e.val("run.tau_max", 0)?, mode: read_mode.0 },
        delay_model: delay,
        master_seed: e.val("run.seed", 0)?,
        objective_every: e.val("run.objective_every", 0)?,
        transport: e.with("run.transport", "loopback:0,0", parse_transport)?.0,
        queue_capacity: queue_capacity.0,
    };

    let output = PathBuf::from(e.val::<String>("output.trace", "trace.csv".into())?);
    let (stride, l_stride) = e.get::<u64>("audit.stride", Some(10))?;
    check(stride > 0, l_stride, "audit.stride must be positive")?;
    let audit = AuditSpec { enabled: e.val("audit.enabled", false)?, stride, phi: e.val("audit.phi", false)? };
    let supplied = SuppliedInputs {
        l: e.optional_f64("bounds.L")?,
        c_f: e.optional_f64("bounds.C_F")?,
        d_inf: e.optional_f64("bounds.D_inf")?,
    };
    let (k0, l_k0) = e.with("bounds.k0", "auto", |s| {
        if s == "auto" {
            Ok(None)
        } else {
            s.parse::<u64>().map(Some).map_err(|e| e.to_string())
        }
    })?;
    if let Some(k0) = k0 {
        check((2..=iterations).contains(&k0), l_k0, format!("bounds.k0 = {k0} must lie in [2, run.iterations]"))?;
    }

    if let Some((key, (_, line))) = e.map.into_iter().min_by_key(|(_, (_, l))| *l) {
        return Err(err(Some(line), format!("unknown key {key}")));
    }
    Ok(ExperimentConfig { problem, hp, run, output, audit, supplied, k0 })
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    std::fs::read_to_string(path)
        .map_err(|e| err(None, e.to_string()))
        .and_then(|text| parse_config_str(&text))
        .map_err(|e| ConfigError { file: Some(path.to_path_buf()), ..e })
}

impl ExperimentConfig {
    /// Canonical text form; `parse_config_str(&cfg.to_config_string())`
    /// returns `cfg`.
    pub fn to_config_string(&self) -> String {
        let p = &self.problem;
        let (schedule, alpha) = match self.hp.schedule {
            LrSchedule::Constant { alpha } => ("constant", alpha),
            LrSchedule::InvSqrtK { alpha } => ("inv_sqrt_k", alpha),
            LrSchedule::ConstOverSqrtK { alpha, .. } => ("const_over_sqrt_k", alpha),
        };
        let r = &self.run;
        let data = match &p.data {
            DataSource::Synthetic => "synthetic".to_string(),
            DataSource::File(f) => f.display().to_string(),
        };
        let read_mode = match r.policy.mode {
            ReadMode::Consistent => "consistent",
            ReadMode::Inconsistent => "inconsistent",
        };
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("problem.kind", p.kind.name().into());
        kv("problem.data", data);
        kv("problem.samples", p.samples.to_string());
        kv("problem.features", p.features.to_string());
        kv("problem.classes", p.classes.to_string());
        kv("problem.nnz", p.nnz.to_string());
        kv("problem.separable", p.separable.to_string());
        kv("problem.data_seed", p.data_seed.to_string());
        kv("problem.l2", p.l2.to_string());
        kv("problem.hidden", p.hidden.to_string());
        kv("problem.box", fmt_opt(&p.box_radius, "none"));
        kv("problem.linear_coords", p.linear_coords.to_string());
        kv("problem.noise_samples", p.noise_samples.to_string());
        kv("problem.noise_scale", p.noise_scale.to_string());
        kv("optim.beta1", self.hp.beta1.to_string());
        kv("optim.beta2", self.hp.beta2.to_string());
        kv("optim.eps", self.hp.eps.to_string());
        kv("optim.schedule", schedule.into());
        kv("optim.alpha", alpha.to_string());
        kv("run.mode", r.mode.name().into());
        kv("run.workers", r.workers.to_string());
        kv("run.batch_size", r.batch_size.to_string());
        kv("run.iterations", r.iterations.to_string());
        kv("run.tau_max", r.policy.tau_max.to_string());
        kv("run.read_mode", read_mode.into());
        kv("run.delay", fmt_delay(&r.delay_model));
        kv("run.seed", r.master_seed.to_string());
        kv("run.objective_every", r.objective_every.to_string());
        kv("run.transport", fmt_transport(&r.transport));
        kv("run.queue_capacity", fmt_opt(&r.queue_capacity, "auto"));
        kv("output.trace", self.output.display().to_string());
        kv("audit.enabled", self.audit.enabled.to_string());
        kv("audit.stride", self.audit.stride.to_string());
        kv("audit.phi", self.audit.phi.to_string());
        kv("bounds.L", fmt_opt(&self.supplied.l, "none"));
        kv("bounds.C_F", fmt_opt(&self.supplied.c_f, "none"));
        kv("bounds.D_inf", fmt_opt(&self.supplied.d_inf, "none"));
        kv("bounds.k0", fmt_opt(&self.k0, "auto"));
        out
    }
}
