use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::time::Duration;

use crate::optimizer::OptimizerState;
use crate::vectormath::DenseVec;

pub const TRACE_HEADER: &str = "k,alpha_k,tau_k,dropped,objective,grad_norm_sq,wallclock_ns";

/// One received gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 1-based index of the received gradient.
    pub k: u64,
    /// Step size applied, or that would have applied for a dropped gradient.
    pub alpha: f64,
    pub tau: u64,
    pub dropped: bool,
    /// `F` at the iterate after this row, when evaluated.
    pub objective: Option<f64>,
    /// `‖g‖²`
    pub grad_norm_sq: f64,
    /// `‖g‖∞`, `‖g‖₁` and `‖g‖₀`; kept in memory for bound estimation.
    pub grad_inf: f64,
    pub grad_l1: f64,
    pub grad_nnz: usize,
    pub worker: u32,
    /// Nanoseconds since the run started; 0 in simulation mode.
    pub wallclock_ns: u64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    /// `(key, value)` lines written as `# key = value` before the header.
    pub meta: Vec<(String, String)>,
    pub rows: Vec<TraceRow>,
    pub initial_x: DenseVec,
    pub initial_objective: Option<f64>,
    pub final_state: OptimizerState,
    pub produced: u64,
    pub applied: u64,
    pub dropped: u64,
    /// Gradients still queued or in flight when the master stopped.
    pub unconsumed: u64,
    /// Frames lost or rejected by the transport (wire mode only).
    pub transport_drops: u64,
    /// Count of applied gradients per staleness value.
    pub tau_histogram: BTreeMap<u64, u64>,
    pub elapsed: Duration,
}

impl RunTrace {
    pub fn received(&self) -> u64 {
        self.applied + self.dropped
    }

    /// Applied gradients per second of wall time.
    pub fn throughput(&self) -> f64 {
        let s = self.elapsed.as_secs_f64();
        if s > 0.0 {
            self.applied as f64 / s
        } else {
            0.0
        }
    }

    pub fn max_applied_tau(&self) -> Option<u64> {
        self.tau_histogram.keys().next_back().copied()
    }

    pub fn mean_applied_tau(&self) -> Option<f64> {
        let n: u64 = self.tau_histogram.values().sum();
        if n == 0 {
            return None;
        }
        let s: f64 = self.tau_histogram.iter().map(|(t, c)| (*t * *c) as f64).sum();
        Some(s / n as f64)
    }

    /// Last evaluated objective value.
    pub fn final_objective(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.objective).or(self.initial_objective)
    }

    pub fn push_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.push((key.into(), value.to_string()));
    }

    /// `0:12;1:3` style summary of the staleness histogram.
    pub fn histogram_summary(&self) -> String {
        let parts: Vec<String> = self.tau_histogram.iter().map(|(t, c)| format!("{t}:{c}")).collect();
        parts.join(";")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_csv_string().as_bytes())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            writeln!(out, "# {k} = {v}").unwrap();
        }
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},{},{},{},", r.k, r.alpha, r.tau, u8::from(r.dropped)).unwrap();
            if let Some(f) = r.objective {
                write!(out, "{f}").unwrap();
            }
            writeln!(out, ",{},{}", r.grad_norm_sq, r.wallclock_ns).unwrap();
        }
        writeln!(
            out,
            "# produced = {}, applied = {}, dropped = {}, unconsumed = {}, transport_drops = {}",
            self.produced, self.applied, self.dropped, self.unconsumed, self.transport_drops
        )
        .unwrap();
        writeln!(out, "# staleness_histogram = {}", self.histogram_summary()).unwrap();
        out
    }
}

/// Reads the data rows of a trace CSV; comment lines are skipped. Columns not
/// present in the CSV (`grad_inf`, `grad_l1`, `grad_nnz`, `worker`) are zero.
pub fn parse_trace_rows(text: &str) -> Result<Vec<TraceRow>, String> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != TRACE_HEADER {
                return Err(format!("line {}: expected header {TRACE_HEADER:?}", i + 1));
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(format!("line {}: expected 7 fields, got {}", i + 1, f.len()));
        }
        let bad = |what: &str| format!("line {}: bad {what}", i + 1);
        rows.push(TraceRow {
            k: f[0].parse().map_err(|_| bad("k"))?,
            alpha: f[1].parse().map_err(|_| bad("alpha_k"))?,
            tau: f[2].parse().map_err(|_| bad("tau_k"))?,
            dropped: match f[3] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("dropped")),
            },
            objective: if f[4].is_empty() { None } else { Some(f[4].parse().map_err(|_| bad("objective"))?) },
            grad_norm_sq: f[5].parse().map_err(|_| bad("grad_norm_sq"))?,
            grad_inf: 0.0,
            grad_l1: 0.0,
            grad_nnz: 0,
            worker: 0,
            wallclock_ns: f[6].parse().map_err(|_| bad("wallclock_ns"))?,
        });
    }
    if !seen_header {
        return Err("missing header".into());
    }
    Ok(rows)
}
