use std::collections::BTreeMap;

use crate::control::RiccatiSolution;
use crate::error::{dim_check, Error, Result};
use crate::l2d::{
    prediction_jacobian, predict_window, scenario_weights_affine, AffineMixerParams,
    ContextFeatures, ScenarioLibrary,
};
use crate::linalg::{quad_form, Mat, Vector};

/// Context frozen at step `t` plus the realized disturbances `w_{t:𝒯}` as
/// they are revealed.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWindow {
    pub t: usize,
    pub t_end: usize,
    pub feats: ContextFeatures,
    pub context: String,
    pub w_real: Mat,
    observed: usize,
}

impl LossWindow {
    pub fn new(t: usize, t_end: usize, feats: ContextFeatures, context: String, n: usize) -> Self {
        LossWindow { t, t_end, feats, context, w_real: Mat::zeros(t_end - t + 1, n), observed: 0 }
    }

    /// Builds a complete window from known disturbances.
    pub fn complete(t: usize, feats: ContextFeatures, context: String, w: &[Vector]) -> Self {
        let n = w.first().map_or(0, |v| v.len());
        let mut window = LossWindow::new(t, t + w.len() - 1, feats, context, n);
        for (j, wj) in w.iter().enumerate() {
            window.observe(t + j, wj);
        }
        window
    }

    pub fn len(&self) -> usize {
        self.t_end - self.t + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_complete(&self) -> bool {
        self.observed == self.len()
    }

    /// Records `w_τ` if τ falls in this window and is the next unobserved step.
    pub fn observe(&mut self, tau: usize, w: &Vector) {
        if tau == self.t + self.observed && tau <= self.t_end {
            self.w_real.set_row(self.observed, &w.transpose());
            self.observed += 1;
        }
    }
}

/// Open loss windows keyed by start step.
#[derive(Debug, Clone, Default)]
pub struct WindowBook {
    pending: BTreeMap<usize, LossWindow>,
}

impl WindowBook {
    pub fn open(&mut self, window: LossWindow) {
        self.pending.insert(window.t, window);
    }

    /// Feeds `w_t` to every open window and returns the start steps of the
    /// windows that just became complete.
    pub fn observe(&mut self, t: usize, w: &Vector) -> Vec<usize> {
        let mut done = Vec::new();
        for (start, window) in self.pending.iter_mut() {
            window.observe(t, w);
            if window.is_complete() && window.t_end == t {
                done.push(*start);
            }
        }
        done
    }

    pub fn get(&self, start: usize) -> Option<&LossWindow> {
        self.pending.get(&start)
    }

    pub fn take(&mut self, start: usize) -> Option<LossWindow> {
        self.pending.remove(&start)
    }

    /// Drops complete windows that started before `start`.
    pub fn prune_before(&mut self, start: usize) {
        self.pending.retain(|s, w| *s >= start || !w.is_complete());
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

fn forecast(params: &AffineMixerParams, window: &LossWindow, lib: &ScenarioLibrary) -> Result<Mat> {
    let p = scenario_weights_affine(params, &window.feats)?;
    Ok(predict_window(&p, lib, window.t, window.len(), window.t_end + 1)?.what)
}

/// `ψ̂ = Σ_j (Fᵀ)ʲ P (w_{t+j} − ŵ_{t+j|t})`.
pub fn psi_hat(sol: &RiccatiSolution, w_real: &Mat, what: &Mat) -> Result<Vector> {
    dim_check("forecast rows", w_real.nrows(), what.nrows())?;
    let props = sol.propagators(w_real.nrows());
    let mut acc = Vector::zeros(sol.n());
    for j in 0..w_real.nrows() {
        acc += &props[j] * (w_real.row(j) - what.row(j)).transpose();
    }
    Ok(acc)
}

/// `M = Σ_j (Fᵀ)ʲ P J_j` where `J_j` are the n-row blocks of the forecast
/// Jacobian; `∂ψ̂/∂θ = −M`.
pub fn psi_jacobian(sol: &RiccatiSolution, jac: &Mat, len: usize) -> Mat {
    let n = sol.n();
    let props = sol.propagators(len);
    let mut m = Mat::zeros(n, jac.ncols());
    for j in 0..len {
        m += &props[j] * jac.rows(j * n, n);
    }
    m
}

/// `L_t(θ) = ψ̂_t(θ)ᵀ H ψ̂_t(θ)`.
pub fn tailored_loss(
    sol: &RiccatiSolution,
    lib: &ScenarioLibrary,
    params: &AffineMixerParams,
    window: &LossWindow,
) -> Result<f64> {
    if !window.is_complete() {
        return Err(Error::IncompleteWindow(window.t));
    }
    let psi = psi_hat(sol, &window.w_real, &forecast(params, window, lib)?)?;
    Ok(quad_form(&sol.h, &psi))
}

/// `∇L_t(θ) = −2 Mᵀ H ψ̂_t(θ)` on the affine path.
pub fn tailored_loss_gradient(
    sol: &RiccatiSolution,
    lib: &ScenarioLibrary,
    params: &AffineMixerParams,
    window: &LossWindow,
) -> Result<Vector> {
    if !window.is_complete() {
        return Err(Error::IncompleteWindow(window.t));
    }
    let psi = psi_hat(sol, &window.w_real, &forecast(params, window, lib)?)?;
    let jac = prediction_jacobian(params, &window.feats, lib, window.t, window.len(), window.t_end + 1)?;
    let m = psi_jacobian(sol, &jac, window.len());
    Ok(-(m.transpose() * (&sol.h * psi)) * 2.0)
}
