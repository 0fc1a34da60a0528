use std::sync::Arc;

use super::{check_dim, check_samples, Dataset, Problem, ProblemError};
use crate::vectormath::{BoxConstraint, DenseVec};

/// Offsets of each block inside the flat parameter vector
/// `[W1 (h×d) | b1 (h) | W2 (C×h) | b2 (C)]`, all row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp2Layout {
    pub inputs: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Mlp2Layout {
    pub fn w1(&self) -> usize {
        0
    }
    pub fn b1(&self) -> usize {
        self.hidden * self.inputs
    }
    pub fn w2(&self) -> usize {
        self.b1() + self.hidden
    }
    pub fn b2(&self) -> usize {
        self.w2() + self.classes * self.hidden
    }
    pub fn len(&self) -> usize {
        self.b2() + self.classes
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One-hidden-layer network `softmax(W2 tanh(W1 x + b1) + b2)` with mean
/// cross-entropy loss.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    features: Vec<Vec<f64>>,
    targets: Vec<usize>,
    layout: Mlp2Layout,
    bounds: BoxConstraint,
}

struct Scratch {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl Mlp2 {
    pub fn new(data: Arc<Dataset>, hidden: usize) -> Result<Self, ProblemError> {
        if hidden == 0 {
            return Err(ProblemError::Invalid("hidden width must be positive".into()));
        }
        let layout = Mlp2Layout { inputs: data.n_features, hidden, classes: data.n_classes };
        let features = (0..data.len()).map(|j| data.dense_row(j)).collect();
        let targets = (0..data.len()).map(|j| data.class_index(j)).collect();
        Ok(Mlp2 { features, targets, layout, bounds: BoxConstraint::unbounded(layout.len()) })
    }

    pub fn layout(&self) -> Mlp2Layout {
        self.layout
    }

    /// Forward pass for one sample; returns the loss and leaves activations in `s`.
    fn forward(&self, theta: &[f64], j: usize, s: &mut Scratch) -> f64 {
        let Mlp2Layout { inputs: d, hidden: h, classes: c } = self.layout;
        let x = &self.features[j];
        let (w1, b1) = (&theta[..h * d], &theta[self.layout.b1()..self.layout.w2()]);
        let (w2, b2) = (&theta[self.layout.w2()..self.layout.b2()], &theta[self.layout.b2()..]);
        for r in 0..h {
            let row = &w1[r * d..(r + 1) * d];
            let a = row.iter().zip(x).fold(b1[r], |acc, (w, xi)| acc + w * xi);
            s.hidden[r] = a.tanh();
        }
        let mut max_logit = f64::NEG_INFINITY;
        for k in 0..c {
            let row = &w2[k * h..(k + 1) * h];
            let o = row.iter().zip(&s.hidden).fold(b2[k], |acc, (w, z)| acc + w * z);
            s.probs[k] = o;
            max_logit = max_logit.max(o);
        }
        let mut total = 0.0;
        for p in s.probs.iter_mut() {
            *p = (*p - max_logit).exp();
            total += *p;
        }
        let y = self.targets[j];
        // -log softmax_y computed from the shifted logits
        let loss = total.ln() - s.probs[y].ln();
        for p in s.probs.iter_mut() {
            *p /= total;
        }
        loss
    }

    fn backward(&self, theta: &[f64], j: usize, s: &Scratch, grad: &mut [f64], scale: f64) {
        let Mlp2Layout { inputs: d, hidden: h, classes: c } = self.layout;
        let lay = self.layout;
        let x = &self.features[j];
        let y = self.targets[j];
        let w2 = &theta[lay.w2()..lay.b2()];
        let mut dz = vec![0.0; h];
        for k in 0..c {
            let delta = (s.probs[k] - if k == y { 1.0 } else { 0.0 }) * scale;
            grad[lay.b2() + k] += delta;
            let base = lay.w2() + k * h;
            for r in 0..h {
                grad[base + r] += delta * s.hidden[r];
                dz[r] += delta * w2[k * h + r];
            }
        }
        for r in 0..h {
            let da = dz[r] * (1.0 - s.hidden[r] * s.hidden[r]);
            grad[lay.b1() + r] += da;
            let row = &mut grad[r * d..(r + 1) * d];
            for (gi, xi) in row.iter_mut().zip(x) {
                *gi += da * xi;
            }
        }
    }

    fn scratch(&self) -> Scratch {
        Scratch { hidden: vec![0.0; self.layout.hidden], probs: vec![0.0; self.layout.classes] }
    }

    fn grad_over<I: Iterator<Item = usize>>(&self, theta: &[f64], samples: I, count: usize) -> DenseVec {
        let mut g = DenseVec::zeros(self.layout.len());
        let mut s = self.scratch();
        let scale = 1.0 / count as f64;
        for j in samples {
            self.forward(theta, j, &mut s);
            self.backward(theta, j, &s, &mut g, scale);
        }
        g
    }
}

impl Problem for Mlp2 {
    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn bounds(&self) -> &BoxConstraint {
        &self.bounds
    }

    fn num_samples(&self) -> usize {
        self.features.len()
    }

    fn full_value(&self, theta: &[f64]) -> Result<f64, ProblemError> {
        check_dim(self.dim(), theta.len())?;
        let mut s = self.scratch();
        let total = (0..self.features.len()).fold(0.0, |acc, j| acc + self.forward(theta, j, &mut s));
        Ok(total / self.features.len() as f64)
    }

    fn full_grad(&self, theta: &[f64]) -> Result<DenseVec, ProblemError> {
        check_dim(self.dim(), theta.len())?;
        Ok(self.grad_over(theta, 0..self.features.len(), self.features.len()))
    }

    fn batch_grad(&self, theta: &[f64], samples: &[usize]) -> Result<DenseVec, ProblemError> {
        check_dim(self.dim(), theta.len())?;
        check_samples(samples, self.features.len())?;
        Ok(self.grad_over(theta, samples.iter().copied(), samples.len()))
    }
}
