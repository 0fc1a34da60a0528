//! Iterate history, consistent/inconsistent snapshots and the bounded-staleness
//! admission rule.
//!
//! Versions count master updates. A history created with [`ParamHistory::new`]
//! is pre-filled with copies of the initial point at non-positive versions,
//! following the convention that iterates before the start equal the initial
//! iterate. A worker that reads "τ versions ago" during warm-up therefore sees
//! `x^(0)` but is still charged staleness `τ`.

use std::collections::VecDeque;

use thiserror::Error;

use crate::vectormath::DenseVec;

pub type Version = i64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StalenessError {
    #[error("version {requested} has been evicted (oldest kept: {oldest})")]
    Evicted { requested: Version, oldest: Version },
    #[error("version {requested} is newer than current version {current}")]
    FutureVersion { requested: Version, current: Version },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("history capacity must be at least 1 and hold every initial iterate")]
    InvalidCapacity,
}

/// Ring of the most recent iterates with their versions.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamHistory {
    ring: VecDeque<DenseVec>,
    newest: Version,
    capacity: usize,
}

impl ParamHistory {
    /// Full ring of `capacity` copies of `x0`, newest at version 0.
    pub fn new(x0: DenseVec, capacity: usize) -> Result<Self, StalenessError> {
        if capacity == 0 {
            return Err(StalenessError::InvalidCapacity);
        }
        Ok(ParamHistory { ring: std::iter::repeat_n(x0, capacity).collect(), newest: 0, capacity })
    }

    /// Default capacity for a drop threshold: `tau_max + 2`.
    pub fn for_policy(x0: DenseVec, policy: &StalenessPolicy) -> Self {
        Self::new(x0, policy.tau_max as usize + 2).expect("capacity >= 2")
    }

    /// History holding exactly `iterates` at versions `0..len`, with room for
    /// `capacity` entries.
    pub fn from_iterates(iterates: Vec<DenseVec>, capacity: usize) -> Result<Self, StalenessError> {
        if iterates.is_empty() || capacity < iterates.len() {
            return Err(StalenessError::InvalidCapacity);
        }
        let n = iterates[0].len();
        if let Some(bad) = iterates.iter().find(|x| x.len() != n) {
            return Err(StalenessError::DimensionMismatch { expected: n, got: bad.len() });
        }
        let newest = iterates.len() as Version - 1;
        Ok(ParamHistory { ring: iterates.into(), newest, capacity })
    }

    pub fn dim(&self) -> usize {
        self.ring.back().map_or(0, |x| x.len())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        self.ring.len()
    }

    pub fn current_version(&self) -> Version {
        self.newest
    }

    pub fn oldest_version(&self) -> Version {
        self.newest - self.ring.len() as Version + 1
    }

    pub fn current(&self) -> &DenseVec {
        self.ring.back().expect("history is never empty")
    }

    pub fn get(&self, version: Version) -> Result<&DenseVec, StalenessError> {
        if version > self.newest {
            return Err(StalenessError::FutureVersion { requested: version, current: self.newest });
        }
        let oldest = self.oldest_version();
        if version < oldest {
            return Err(StalenessError::Evicted { requested: version, oldest });
        }
        Ok(&self.ring[(version - oldest) as usize])
    }

    /// Appends the next iterate, evicting the oldest one only when full.
    pub fn push(&mut self, x: DenseVec) -> Result<Version, StalenessError> {
        if x.len() != self.dim() {
            return Err(StalenessError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if self.ring.len() == self.capacity {
            self.ring.pop_front();
        }
        self.ring.push_back(x);
        self.newest += 1;
        Ok(self.newest)
    }

    /// The iterate `delay` versions ago, read as a whole.
    pub fn snapshot_consistent(&self, delay: u64) -> Result<(DenseVec, ReadMeta), StalenessError> {
        let version = self.newest - delay as Version;
        let x = self.get(version)?.clone();
        let meta = ReadMeta::consistent(version, x.len());
        Ok((x, meta))
    }

    /// Coordinate `i` is taken from the iterate `delays[i]` versions ago.
    pub fn snapshot_inconsistent(&self, delays: &[u64]) -> Result<(DenseVec, ReadMeta), StalenessError> {
        if delays.len() != self.dim() {
            return Err(StalenessError::DimensionMismatch { expected: self.dim(), got: delays.len() });
        }
        let versions: Vec<Version> = delays.iter().map(|d| self.newest - *d as Version).collect();
        let meta = ReadMeta::new(versions);
        let x = self.reconstruct(&meta)?;
        Ok((x, meta))
    }

    /// Rebuilds the vector a reader with metadata `meta` observed.
    pub fn reconstruct(&self, meta: &ReadMeta) -> Result<DenseVec, StalenessError> {
        if meta.len() != self.dim() {
            return Err(StalenessError::DimensionMismatch { expected: self.dim(), got: meta.len() });
        }
        meta.per_coord_version.iter().enumerate().map(|(i, &v)| self.get(v).map(|x| x[i])).collect()
    }
}

/// Version each coordinate of a snapshot was read at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadMeta {
    pub per_coord_version: Vec<Version>,
}

impl ReadMeta {
    pub fn new(per_coord_version: Vec<Version>) -> Self {
        ReadMeta { per_coord_version }
    }

    pub fn consistent(version: Version, n: usize) -> Self {
        ReadMeta { per_coord_version: vec![version; n] }
    }

    pub fn len(&self) -> usize {
        self.per_coord_version.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_coord_version.is_empty()
    }

    pub fn min_version(&self) -> Version {
        self.per_coord_version.iter().copied().min().unwrap_or(0)
    }

    pub fn max_version(&self) -> Version {
        self.per_coord_version.iter().copied().max().unwrap_or(0)
    }

    pub fn is_consistent(&self) -> bool {
        self.min_version() == self.max_version()
    }
}

/// Staleness `τ` of a read relative to `current`: the largest per-coordinate
/// delay. For histories without repeated iterates this equals the smallest `j`
/// such that every coordinate matches one of the last `j+1` iterates.
pub fn tau_of(meta: &ReadMeta, current: Version) -> u64 {
    (current - meta.min_version()).max(0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadMode {
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StalenessPolicy {
    /// Gradients with `τ > tau_max` are discarded.
    pub tau_max: u64,
    pub mode: ReadMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Accept { tau: u64 },
    Drop { tau: u64 },
}

impl Admission {
    pub fn tau(&self) -> u64 {
        match *self {
            Admission::Accept { tau } | Admission::Drop { tau } => tau,
        }
    }

    pub fn accepted(&self) -> bool {
        matches!(self, Admission::Accept { .. })
    }
}

pub fn admit(meta: &ReadMeta, current: Version, policy: &StalenessPolicy) -> Admission {
    let tau = tau_of(meta, current);
    if tau <= policy.tau_max {
        Admission::Accept { tau }
    } else {
        Admission::Drop { tau }
    }
}

/// Both sides of
/// `‖x̂ - x^(k)‖ ≤ Σ_{l<τ} ‖x^(k-l) - x^(k-l-1)‖` and
/// `‖x̂ - x^(k)‖² ≤ τ Σ_{l<τ} ‖x^(k-l) - x^(k-l-1)‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureReport {
    pub tau: u64,
    pub distance: f64,
    pub path_length: f64,
    pub distance_sq: f64,
    pub tau_path_energy: f64,
}

impl MixtureReport {
    /// Smallest slack `rhs - lhs` over both inequalities.
    pub fn slack(&self) -> f64 {
        (self.path_length - self.distance).min(self.tau_path_energy - self.distance_sq)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.slack() >= -tol
    }
}

pub const MIXTURE_TOL: f64 = 1e-9;

/// Evaluates the mixture-distance bounds for the snapshot described by `meta`
/// against the current iterate of `hist`.
pub fn mixture_bounds_check(hist: &ParamHistory, meta: &ReadMeta) -> Result<MixtureReport, StalenessError> {
    let current = hist.current_version();
    if meta.max_version() > current {
        return Err(StalenessError::FutureVersion { requested: meta.max_version(), current });
    }
    let xhat = hist.reconstruct(meta)?;
    let tau = tau_of(meta, current);
    let xk = hist.current();
    let diff = xhat.sub(xk).map_err(|_| StalenessError::DimensionMismatch { expected: xk.len(), got: xhat.len() })?;
    let distance_sq = diff.norm_sq();
    let mut path_length = 0.0;
    let mut energy = 0.0;
    for l in 0..tau as Version {
        let a = hist.get(current - l)?;
        let b = hist.get(current - l - 1)?;
        let step_sq = a.iter().zip(b.iter()).fold(0.0, |acc, (p, q)| acc + (p - q) * (p - q));
        path_length += step_sq.sqrt();
        energy += step_sq;
    }
    Ok(MixtureReport {
        tau,
        distance: distance_sq.sqrt(),
        path_length,
        distance_sq,
        tau_path_energy: tau as f64 * energy,
    })
}
