use super::bounds::BoundInputs;
use super::tracker::GammaPhiTracker;
use crate::optimizer::HyperParams;
use crate::runtime::RunTrace;
use crate::vectormath::BoxConstraint;

/// Where an estimated bound input came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Computed from the run's gradient stream or state.
    Measured,
    /// Given by the user; not checked.
    Supplied,
    /// Read off the feasible box.
    FromBox,
    /// Could not be determined.
    Unavailable,
}

impl Provenance {
    pub fn label(&self) -> &'static str {
        match self {
            Provenance::Measured => "measured",
            Provenance::Supplied => "assumed",
            Provenance::FromBox => "box",
            Provenance::Unavailable => "unavailable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: Option<f64>,
    pub provenance: Provenance,
}

impl Estimate {
    pub fn measured(v: f64) -> Self {
        Estimate { value: Some(v), provenance: Provenance::Measured }
    }

    pub fn unavailable() -> Self {
        Estimate { value: None, provenance: Provenance::Unavailable }
    }

    fn supplied_or_unavailable(v: Option<f64>) -> Self {
        match v {
            Some(v) => Estimate { value: Some(v), provenance: Provenance::Supplied },
            None => Estimate::unavailable(),
        }
    }
}

impl std::fmt::Display for Estimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.value {
            Some(v) => write!(f, "{v} ({})", self.provenance.label()),
            None => write!(f, "n/a ({})", self.provenance.label()),
        }
    }
}

/// Constants the run cannot measure.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SuppliedInputs {
    pub l: Option<f64>,
    pub c_f: Option<f64>,
    /// Overrides the box diameter, e.g. for an unconstrained problem whose
    /// iterates are known to stay in a bounded region.
    pub d_inf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputEstimates {
    pub n: usize,
    pub g_inf: Estimate,
    pub g1: Estimate,
    pub s: Estimate,
    pub tau: Estimate,
    pub d_inf: Estimate,
    pub l: Estimate,
    pub c_f: Estimate,
    /// `min_i √ṽ_i^(k0-1)`.
    pub c: Estimate,
    /// One-sample value of `‖(ṽ^(k0-1))^{-1/2}‖₁`.
    pub e_vtilde_inv_l1: Estimate,
}

/// Estimates bound inputs from a finished run. `G∞`, `G1` and `s` are taken
/// over every received gradient; `τ` is the largest applied staleness; `c` and
/// `E‖(ṽ^(k0-1))^{-1/2}‖₁` come from the `ṽ` captured by `tracker` (when it
/// was set up to capture a step). `L` and `C_F` are only ever supplied.
pub fn estimate_inputs(
    trace: &RunTrace,
    tracker: Option<&GammaPhiTracker<'_>>,
    supplied: &SuppliedInputs,
    bounds: &BoxConstraint,
) -> InputEstimates {
    let rows = &trace.rows;
    let g_inf = rows.iter().fold(0.0f64, |m, r| m.max(r.grad_inf));
    let g1 = if rows.is_empty() { 0.0 } else { rows.iter().map(|r| r.grad_l1).sum::<f64>() / rows.len() as f64 };
    let s = rows.iter().map(|r| r.grad_nnz).max().unwrap_or(0);
    let d_inf = match (supplied.d_inf, bounds.diameter_inf()) {
        (Some(d), _) => Estimate { value: Some(d), provenance: Provenance::Supplied },
        (None, Some(d)) => Estimate { value: Some(d), provenance: Provenance::FromBox },
        (None, None) => Estimate::unavailable(),
    };
    let vtilde = tracker.and_then(|t| t.captured_vtilde());
    let (c, e) = match vtilde {
        Some(vt) if !vt.is_empty() => {
            let c = vt.iter().fold(f64::INFINITY, |m, v| m.min(v.sqrt()));
            let e: f64 = vt.iter().map(|v| 1.0 / v.sqrt()).sum();
            (Estimate::measured(c), Estimate::measured(e))
        }
        _ => (Estimate::unavailable(), Estimate::unavailable()),
    };
    InputEstimates {
        n: bounds.dim(),
        g_inf: Estimate::measured(g_inf),
        g1: Estimate::measured(g1),
        s: Estimate::measured(s as f64),
        tau: Estimate::measured(trace.max_applied_tau().unwrap_or(0) as f64),
        d_inf,
        l: Estimate::supplied_or_unavailable(supplied.l),
        c_f: Estimate::supplied_or_unavailable(supplied.c_f),
        c,
        e_vtilde_inv_l1: e,
    }
}

/// Which bound the inputs are assembled for; fields a bound does not use are
/// set to zero and need not be available.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    ConvexNoDelay,
    ConvexDelay,
    Nonconvex,
}

impl InputEstimates {
    /// Assembles [`BoundInputs`]; fails naming the first required field that
    /// is unavailable.
    pub fn to_bound_inputs(&self, kind: BoundKind, hp: &HyperParams, k: u64, k0: u64) -> Result<BoundInputs, String> {
        let (convex, delay, ncvx) = match kind {
            BoundKind::ConvexNoDelay => (true, false, false),
            BoundKind::ConvexDelay => (true, true, false),
            BoundKind::Nonconvex => (false, true, true),
        };
        let get = |name: &str, e: &Estimate, needed: bool| -> Result<f64, String> {
            match (needed, e.value) {
                (_, Some(v)) => Ok(v),
                (true, None) => Err(format!("{name} is unavailable")),
                (false, None) => Ok(0.0),
            }
        };
        Ok(BoundInputs {
            n: self.n,
            d_inf: get("D_inf", &self.d_inf, convex)?,
            g1: get("G1", &self.g1, convex)?,
            g_inf: get("G_inf", &self.g_inf, true)?,
            l: get("L", &self.l, delay)?,
            s: get("s", &self.s, delay)?,
            tau: get("tau", &self.tau, delay)? as u64,
            c_f: get("C_F", &self.c_f, ncvx)?,
            c: get("c", &self.c, ncvx)?,
            beta1: hp.beta1,
            beta2: hp.beta2,
            alpha: hp.schedule.base_alpha(),
            k,
            k0,
        })
    }

    /// `(key, value)` lines with provenance, for a trace header or report.
    pub fn describe(&self) -> Vec<(String, String)> {
        vec![
            ("estimate.G_inf".into(), self.g_inf.to_string()),
            ("estimate.G1".into(), self.g1.to_string()),
            ("estimate.s".into(), self.s.to_string()),
            ("estimate.tau".into(), self.tau.to_string()),
            ("estimate.D_inf".into(), self.d_inf.to_string()),
            ("estimate.L".into(), self.l.to_string()),
            ("estimate.C_F".into(), self.c_f.to_string()),
            ("estimate.c".into(), self.c.to_string()),
            ("estimate.E_vtilde_inv_l1".into(), self.e_vtilde_inv_l1.to_string()),
        ]
    }
}
