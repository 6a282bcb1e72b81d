use crate::error::{dim_check, Result};
use crate::linalg::{quad_form, Mat, Vector};

use super::{EpisodeTrace, RiccatiSolution};

/// `s_t = Σ_{τ=t}^{T−1} (Fᵀ)^{τ−t} P w_τ` for every t, by the backward
/// recursion `s_t = P w_t + Fᵀ s_{t+1}`.
pub fn tail_sums(sol: &RiccatiSolution, w: &[Vector]) -> Vec<Vector> {
    let ft = sol.f.transpose();
    let mut out = vec![Vector::zeros(sol.n()); w.len()];
    let mut acc = Vector::zeros(sol.n());
    for t in (0..w.len()).rev() {
        acc = &sol.p * &w[t] + &ft * &acc;
        out[t] = acc.clone();
    }
    out
}

/// Rolls out the clairvoyant controller that knows the whole disturbance
/// sequence; returns its trace and the optimal cost `J*`. The trace carries
/// empty forecast windows.
pub fn offline_optimal(
    sol: &RiccatiSolution,
    x0: &Vector,
    w: &[Vector],
) -> Result<(EpisodeTrace, f64)> {
    dim_check("initial state", sol.n(), x0.len())?;
    let model = sol.model();
    let tails = tail_sums(sol, w);
    let horizon = w.len();
    let mut trace = EpisodeTrace::new(horizon, x0.clone());
    let mut x = x0.clone();
    for t in 0..horizon {
        let u = -(&sol.gain * (&sol.p * (&model.a * &x) + &tails[t]));
        let next = &model.a * &x + &model.b * &u + &w[t];
        trace.record(model, u, w[t].clone(), Mat::zeros(0, sol.n()), format!("t{t}"), next.clone());
        x = next;
    }
    let cost = trace.stage_costs.iter().sum::<f64>() + quad_form(&sol.p, &x);
    Ok((trace, cost))
}

/// `ψ_t = s_t − Σ_{j} (Fᵀ)ʲ P ŵ_{t+j|t}` per step, and the gap `Σ ψ_tᵀHψ_t`.
///
/// `windows[t]` holds the forecast rows used at step t.
pub fn cost_gap_psi(
    sol: &RiccatiSolution,
    windows: &[Mat],
    w: &[Vector],
) -> Result<(Vec<Vector>, f64)> {
    dim_check("window count", w.len(), windows.len())?;
    let tails = tail_sums(sol, w);
    let longest = windows.iter().map(|m| m.nrows()).max().unwrap_or(0);
    let props = sol.propagators(longest);
    let mut psi = Vec::with_capacity(w.len());
    let mut gap = 0.0;
    for (t, window) in windows.iter().enumerate() {
        let mut p = tails[t].clone();
        for j in 0..window.nrows() {
            p -= &props[j] * window.row(j).transpose();
        }
        gap += quad_form(&sol.h, &p);
        psi.push(p);
    }
    Ok((psi, gap))
}
