use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::Rng;
use rand_distr::{StandardNormal, Zipf};

use super::ProblemError;
use crate::rng::rng_from;
use crate::vectormath::SparseVec;

/// Labelled sparse samples.
///
/// Binary datasets use labels `±1`; multiclass datasets use `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<SparseVec>,
    pub labels: Vec<i64>,
    pub n_features: usize,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(rows: Vec<SparseVec>, labels: Vec<i64>, n_features: usize) -> Result<Self, ProblemError> {
        if rows.is_empty() {
            return Err(ProblemError::EmptyDataset);
        }
        if rows.len() != labels.len() {
            return Err(ProblemError::DimensionMismatch { expected: rows.len(), got: labels.len() });
        }
        if let Some(r) = rows.iter().find(|r| r.min_dim() > n_features) {
            return Err(ProblemError::DimensionMismatch { expected: n_features, got: r.min_dim() });
        }
        let n_classes = infer_classes(&labels)?;
        Ok(Dataset { rows, labels, n_features, n_classes })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_binary_pm1(&self) -> bool {
        self.labels.iter().all(|y| *y == 1 || *y == -1)
    }

    /// Class id in `0..n_classes`; `-1` maps to 0 and `+1` to 1 for binary data.
    pub fn class_index(&self, sample: usize) -> usize {
        let y = self.labels[sample];
        if self.is_binary_pm1() {
            usize::from(y == 1)
        } else {
            y as usize
        }
    }

    pub fn dense_row(&self, sample: usize) -> Vec<f64> {
        self.rows[sample].to_dense(self.n_features).expect("row fits n_features").into_inner()
    }
}

fn infer_classes(labels: &[i64]) -> Result<usize, ProblemError> {
    if labels.iter().all(|y| *y == 1 || *y == -1) {
        return Ok(2);
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, y)| **y < 0) {
        return Err(ProblemError::Parse {
            line: index + 1,
            msg: format!("label {label} is neither ±1 nor a class id"),
        });
    }
    Ok(labels.iter().max().map_or(0, |m| *m as usize + 1).max(2))
}

/// Parses LIBSVM text: `label idx:val idx:val ...` with 1-based indices.
pub fn parse_libsvm(text: &str) -> Result<Dataset, ProblemError> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut n_features = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            warn!("libsvm: skipping empty line {line}");
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line");
        let label = parse_label(label_tok)
            .ok_or_else(|| ProblemError::Parse { line, msg: format!("invalid label {label_tok:?}") })?;
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut last_idx = 0;
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| ProblemError::Parse { line, msg: format!("expected idx:val, got {tok:?}") })?;
            let idx: usize =
                i.parse().map_err(|_| ProblemError::Parse { line, msg: format!("non-numeric index {i:?}") })?;
            let val: f64 =
                v.parse().map_err(|_| ProblemError::Parse { line, msg: format!("non-numeric value {v:?}") })?;
            if idx == 0 {
                return Err(ProblemError::Parse { line, msg: "indices are 1-based".into() });
            }
            if !val.is_finite() {
                return Err(ProblemError::Parse { line, msg: format!("non-finite value {v:?}") });
            }
            if idx <= last_idx {
                return Err(ProblemError::Parse { line, msg: format!("index {idx} is not increasing") });
            }
            last_idx = idx;
            n_features = n_features.max(idx);
            if val != 0.0 {
                indices.push(idx - 1);
                values.push(val);
            }
        }
        rows.push(SparseVec::new(indices, values)?);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(ProblemError::Parse { line: 0, msg: "no samples found".into() });
    }
    Dataset::new(rows, labels, n_features)
}

fn parse_label(tok: &str) -> Option<i64> {
    let v: f64 = tok.parse().ok()?;
    (v.is_finite() && v.fract() == 0.0).then_some(v as i64)
}

pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset, ProblemError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ProblemError::Io(format!("{}: {e}", path.display())))?;
    parse_libsvm(&text)
}

/// Writes LIBSVM text that [`load_libsvm`] reads back losslessly.
pub fn write_libsvm(data: &Dataset, path: impl AsRef<Path>) -> Result<(), ProblemError> {
    let mut out = String::new();
    for (row, y) in data.rows.iter().zip(&data.labels) {
        if *y > 0 && data.is_binary_pm1() {
            out.push('+');
        }
        write!(out, "{y}").unwrap();
        for (i, v) in row.iter() {
            write!(out, " {}:{:?}", i + 1, v).unwrap();
        }
        out.push('\n');
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| ProblemError::Io(format!("{}: {e}", path.display())))
}

fn unit_direction(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v /= norm);
    w
}

/// Two Gaussian clouds with labels `±1`.
///
/// With `separable`, each point is pushed away from the hyperplane `w*·x = 0`
/// so that `y (w*·x) ≥ 1` for a unit vector `w*`. Otherwise the clouds are
/// centred at `±w*` with unit variance and overlap.
pub fn synth_classification(samples: usize, features: usize, separable: bool, seed: u64) -> Dataset {
    assert!(samples >= 1 && features >= 1, "need at least one sample and feature");
    let mut rng = rng_from(seed);
    let w = unit_direction(&mut rng, features);
    let mut rows = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut x: Vec<f64> = (0..features).map(|_| rng.sample(StandardNormal)).collect();
        let y: i64 = if separable {
            let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            if s >= 0.0 {
                1
            } else {
                -1
            }
        } else if rng.random_bool(0.5) {
            1
        } else {
            -1
        };
        x.iter_mut().zip(&w).for_each(|(xi, wi)| *xi += y as f64 * wi);
        rows.push(SparseVec::from_dense(&x));
        labels.push(y);
    }
    Dataset::new(rows, labels, features).expect("generated data is valid")
}

/// Sparse text-like data with labels `±1`: each row has `nnz` distinct
/// features drawn from a Zipf(1) law over the feature index, positive values
/// and unit L2 norm. Labels follow a random linear model with 10% of them
/// flipped.
pub fn synth_sparse_classification(samples: usize, features: usize, nnz: usize, seed: u64) -> Dataset {
    assert!(samples >= 1 && features >= 1, "need at least one sample and feature");
    assert!(nnz >= 1 && nnz <= features, "need 1 <= nnz <= features");
    let mut rng = rng_from(seed);
    let w: Vec<f64> = (0..features).map(|_| rng.sample(StandardNormal)).collect();
    let zipf = Zipf::new(features as f64, 1.0).expect("valid Zipf parameters");
    let mut rows = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut picked = BTreeMap::new();
        while picked.len() < nnz {
            let i = rng.sample(zipf) as usize - 1;
            picked.entry(i).or_insert_with(|| rng.random_range(0.5..1.5));
        }
        let norm = picked.values().map(|v: &f64| v * v).sum::<f64>().sqrt();
        let (idx, val): (Vec<usize>, Vec<f64>) = picked.into_iter().map(|(i, v)| (i, v / norm)).unzip();
        let score: f64 = idx.iter().zip(&val).map(|(i, v)| w[*i] * v).sum();
        let mut y = if score >= 0.0 { 1 } else { -1 };
        if rng.random_bool(0.1) {
            y = -y;
        }
        rows.push(SparseVec::new(idx, val).expect("indices are sorted and distinct"));
        labels.push(y);
    }
    Dataset::new(rows, labels, features).expect("generated data is valid")
}

/// `classes` Gaussian clouds with unit variance around standard-normal means;
/// labels are `0..classes`.
pub fn synth_multiclass(samples: usize, features: usize, classes: usize, seed: u64) -> Dataset {
    assert!(samples >= 1 && features >= 1 && classes >= 2);
    let mut rng = rng_from(seed);
    let means: Vec<Vec<f64>> =
        (0..classes).map(|_| (0..features).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let mut rows = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let c = rng.random_range(0..classes);
        let x: Vec<f64> = means[c].iter().map(|mu| mu + rng.sample::<f64, _>(StandardNormal)).collect();
        rows.push(SparseVec::from_dense(&x));
        labels.push(c as i64);
    }
    // all labels are non-negative, so the class count is max+1 unless some
    // class happens to be absent at the top end
    let mut data = Dataset::new(rows, labels, features).expect("generated data is valid");
    data.n_classes = classes;
    data
}
