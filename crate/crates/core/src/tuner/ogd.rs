use std::collections::hash_map::DefaultHasher;
use std::collections::VecDeque;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::loss::{tailored_loss, tailored_loss_gradient, LossWindow, WindowBook};
use crate::control::RiccatiSolution;
use crate::error::{Error, Result};
use crate::l2d::{AffineMixerParams, ContextFeatures, ScenarioLibrary};
use crate::linalg::{project_ball, Vector};

/// `η_t = D / (G √(2(2k−1)(t+1)))`.
pub fn learning_rate(t: usize, d: f64, g: f64, k: usize) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) || !(g > 0.0 && g.is_finite()) {
        return Err(Error::InvalidParameter(format!("learning rate needs D, G > 0 (got D={d}, G={g})")));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("horizon k must be at least 1".into()));
    }
    Ok(d / (g * (2.0 * (2 * k - 1) as f64 * (t + 1) as f64).sqrt()))
}

/// Euclidean projection onto the ball of diameter `params.diameter` around the center.
pub fn project_theta(params: &AffineMixerParams, theta: &Vector) -> Vector {
    project_ball(theta, &params.center_vec(), params.radius())
}

/// What one delayed update consumed and produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub t: usize,
    pub source: usize,
    pub eta: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub projected: bool,
    /// Hash of the stored parameter the gradient was evaluated at.
    pub theta_hash: u64,
    /// Hash of the context and realized disturbances of the consumed window.
    pub window_hash: u64,
}

#[derive(Debug, Clone)]
struct HistoryEntry {
    t: usize,
    theta: Vector,
    feats: ContextFeatures,
}

/// Delayed projected online gradient descent on the affine mixer.
#[derive(Debug, Clone)]
pub struct TunerState {
    pub params: AffineMixerParams,
    pub k: usize,
    pub g: f64,
    pub projection: bool,
    n: usize,
    history: VecDeque<HistoryEntry>,
    windows: WindowBook,
    step: usize,
    last: Option<UpdateRecord>,
}

pub(crate) fn hash_vector(v: &Vector) -> u64 {
    let mut h = DefaultHasher::new();
    for x in v.iter() {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

pub(crate) fn hash_window(window: &LossWindow) -> u64 {
    let mut h = DefaultHasher::new();
    window.t.hash(&mut h);
    window.feats.context_id.hash(&mut h);
    for x in window.w_real.iter() {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

impl TunerState {
    pub fn new(params: AffineMixerParams, n: usize, k: usize, g: f64, projection: bool) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("horizon k must be at least 1".into()));
        }
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::InvalidParameter(format!("gradient bound G must be positive (got {g})")));
        }
        Ok(TunerState {
            params,
            k,
            g,
            projection,
            n,
            history: VecDeque::with_capacity(k),
            windows: WindowBook::default(),
            step: 0,
            last: None,
        })
    }

    pub fn theta(&self) -> Vector {
        self.params.theta_vec()
    }

    pub fn d(&self) -> f64 {
        self.params.diameter
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn last_update(&self) -> Option<&UpdateRecord> {
        self.last.as_ref()
    }

    pub fn history_depth(&self) -> usize {
        self.history.len()
    }

    pub fn eta(&self, t: usize) -> Result<f64> {
        learning_rate(t, self.d(), self.g, self.k)
    }

    /// Stores `(θ_t, c_t)` and opens the loss window `[t, t_end]`.
    pub fn begin_step(&mut self, t: usize, t_end: usize, feats: ContextFeatures, context: String) -> Result<()> {
        if t != self.step {
            return Err(Error::Tuner(format!("expected step {}, got {t}", self.step)));
        }
        if self.history.len() == self.k {
            self.history.pop_front();
        }
        self.history.push_back(HistoryEntry { t, theta: self.theta(), feats: feats.clone() });
        self.windows.open(LossWindow::new(t, t_end, feats, context, self.n));
        Ok(())
    }

    /// Reveals `w_t` and applies the delayed update for step `t`.
    pub fn finish_step(
        &mut self,
        t: usize,
        w: &Vector,
        sol: &RiccatiSolution,
        lib: &ScenarioLibrary,
    ) -> Result<Option<UpdateRecord>> {
        if t != self.step {
            return Err(Error::Tuner(format!("expected step {}, got {t}", self.step)));
        }
        self.windows.observe(t, w);
        let out = self.ogd_step(t, sol, lib);
        self.step += 1;
        out
    }

    /// `θ_{t+1} = Π(θ_t − η_t ∇L_{t−k+1}(θ_{t−k+1}))`; no update for `t < k`.
    pub fn ogd_step(&mut self, t: usize, sol: &RiccatiSolution, lib: &ScenarioLibrary) -> Result<Option<UpdateRecord>> {
        if t < self.k {
            self.last = None;
            return Ok(None);
        }
        let source = t + 1 - self.k;
        let entry = self
            .history
            .iter()
            .find(|e| e.t == source)
            .cloned()
            .ok_or_else(|| Error::Tuner(format!("no stored parameter for step {source}")))?;
        let window = self
            .windows
            .take(source)
            .ok_or_else(|| Error::Tuner(format!("no loss window for step {source}")))?;
        self.windows.prune_before(source);
        if !window.is_complete() {
            return Err(Error::IncompleteWindow(source));
        }
        if window.feats != entry.feats {
            return Err(Error::Tuner(format!("context mismatch for step {source}")));
        }
        let at_source = self.params.with_theta_vec(&entry.theta);
        let grad = tailored_loss_gradient(sol, lib, &at_source, &window)?;
        let loss = tailored_loss(sol, lib, &at_source, &window)?;
        let eta = self.eta(t)?;
        let stepped = self.theta() - &grad * eta;
        let next = if self.projection { project_theta(&self.params, &stepped) } else { stepped.clone() };
        let projected = next != stepped;
        self.params.set_theta_vec(&next);
        let record = UpdateRecord {
            t,
            source,
            eta,
            loss,
            grad_norm: grad.norm(),
            projected,
            theta_hash: hash_vector(&entry.theta),
            window_hash: hash_window(&window),
        };
        self.last = Some(record.clone());
        Ok(Some(record))
    }
}
