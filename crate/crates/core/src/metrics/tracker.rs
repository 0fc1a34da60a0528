use crate::optimizer::OptimizerState;
use crate::problems::Problem;
use crate::runtime::{ApplyEvent, RunError, RunHooks};
use crate::vectormath::DenseVec;

/// Analysis-side running quantities of a run:
///
/// * `Γ_i(k) = max_{j≤k} |g_i^(j)|` over applied gradients,
/// * `Φ_i(k) = max_{j≤k} |∇_i F(x^(j))|` (opt-in, every `stride` iterates),
/// * `ṽ_i^(k) = max{v̂_i^(k), v̂_i^(k_i)}` with `k_i` the first step where
///   `v̂_i > 0`.
///
/// `ṽ` looks ahead to `k_i`, so it is only final once the run is over; use
/// [`GammaPhiTracker::vtilde_of`] on a recorded `v̂` after the run.
pub struct GammaPhiTracker<'a> {
    pub gamma: DenseVec,
    pub phi: Option<DenseVec>,
    /// `ṽ` at the latest applied step, from what is known so far.
    pub vtilde: DenseVec,
    /// `(k_i, v̂_i^(k_i))` per coordinate once `v̂_i` turns positive.
    pub first_positive: Vec<Option<(u64, f64)>>,
    /// `v̂^(capture_step)` if that step was reached.
    pub captured_vhat: Option<DenseVec>,
    pub steps: u64,
    capture_step: Option<u64>,
    problem: Option<&'a dyn Problem>,
    stride: u64,
}

impl<'a> GammaPhiTracker<'a> {
    pub fn new(n: usize) -> Self {
        GammaPhiTracker {
            gamma: DenseVec::zeros(n),
            phi: None,
            vtilde: DenseVec::zeros(n),
            first_positive: vec![None; n],
            captured_vhat: None,
            steps: 0,
            capture_step: None,
            problem: None,
            stride: 1,
        }
    }

    /// Also track `Φ`, evaluating the full gradient at `x^(1)` and then at
    /// every `stride`-th iterate.
    pub fn with_phi(mut self, problem: &'a dyn Problem, stride: u64) -> Self {
        self.phi = Some(DenseVec::zeros(self.gamma.len()));
        self.problem = Some(problem);
        self.stride = stride.max(1);
        self
    }

    /// Record `v̂^(k)` for `k = step` (for the non-convex bound, `k0 - 1`).
    pub fn capture_vhat_at(mut self, step: u64) -> Self {
        self.capture_step = Some(step);
        self
    }

    /// `max{v̂_i, v̂_i^(k_i)}` using the first positive values seen so far.
    pub fn vtilde_of(&self, vhat: &DenseVec) -> DenseVec {
        let mut out = vhat.clone();
        for (o, fp) in out.as_mut_slice().iter_mut().zip(&self.first_positive) {
            if let Some((_, v)) = fp {
                *o = o.max(*v);
            }
        }
        out
    }

    /// `ṽ^(capture_step)`, final once the run is over.
    pub fn captured_vtilde(&self) -> Option<DenseVec> {
        self.captured_vhat.as_ref().map(|v| self.vtilde_of(v))
    }

    fn update_phi(&mut self, x: &DenseVec) -> Result<(), RunError> {
        if let (Some(problem), Some(phi)) = (self.problem, self.phi.as_mut()) {
            let g = problem.full_grad(x)?;
            for (p, gi) in phi.as_mut_slice().iter_mut().zip(g.iter()) {
                *p = p.max(gi.abs());
            }
        }
        Ok(())
    }
}

impl RunHooks for GammaPhiTracker<'_> {
    fn on_start(&mut self, state: &OptimizerState) -> Result<(), RunError> {
        self.update_phi(&state.x)
    }

    fn on_apply(&mut self, ev: &ApplyEvent<'_>) -> Result<(), RunError> {
        let k = ev.before.k;
        for (gm, gi) in self.gamma.as_mut_slice().iter_mut().zip(ev.msg.g.iter()) {
            *gm = gm.max(gi.abs());
        }
        for (i, &vh) in ev.after.vhat.iter().enumerate() {
            if vh > 0.0 && self.first_positive[i].is_none() {
                self.first_positive[i] = Some((k, vh));
            }
        }
        self.vtilde = self.vtilde_of(&ev.after.vhat);
        if self.capture_step == Some(k) {
            self.captured_vhat = Some(ev.after.vhat.clone());
        }
        self.steps += 1;
        // the new iterate is x^(k+1)
        if (k + 1) % self.stride == 0 {
            self.update_phi(&ev.after.x)?;
        }
        Ok(())
    }
}
