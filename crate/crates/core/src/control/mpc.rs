use crate::error::{dim_check, Error, Result};
use crate::l2d::PredictionWindow;
use crate::linalg::{Mat, Vector};

use super::{EpisodeTrace, RiccatiSolution};

/// `u = −(R+BᵀPB)⁻¹Bᵀ(PAx + Σ_j (Fᵀ)ʲP ŵ_j)` for forecast rows `ŵ_j`.
pub fn mpc_action_raw(sol: &RiccatiSolution, x: &Vector, what: &Mat) -> Result<Vector> {
    dim_check("state length", sol.n(), x.len())?;
    if what.nrows() > 0 {
        dim_check("forecast width", sol.n(), what.ncols())?;
    }
    let props = sol.propagators(what.nrows());
    let model = sol.model();
    let mut s = &sol.p * (&model.a * x);
    for (j, prop) in props.iter().take(what.nrows()).enumerate() {
        s += prop * what.row(j).transpose();
    }
    Ok(-(&sol.gain * s))
}

pub fn mpc_action(sol: &RiccatiSolution, x: &Vector, window: &PredictionWindow) -> Result<Vector> {
    if window.what.nrows() == 0 {
        return Err(Error::Dimension("prediction window must hold at least one step".into()));
    }
    mpc_action_raw(sol, x, &window.what)
}

/// Closed-loop rollout of the MPC law with externally supplied forecasts
/// (one `rows × n` matrix per step) against the realized disturbances.
pub fn rollout_mpc(
    sol: &RiccatiSolution,
    x0: &Vector,
    windows: &[Mat],
    w: &[Vector],
    k: usize,
) -> Result<EpisodeTrace> {
    dim_check("window count", w.len(), windows.len())?;
    let model = sol.model();
    let mut trace = EpisodeTrace::new(k, x0.clone());
    let mut x = x0.clone();
    for (t, (window, wt)) in windows.iter().zip(w).enumerate() {
        let u = mpc_action_raw(sol, &x, window)?;
        let next = &model.a * &x + &model.b * &u + wt;
        trace.record(model, u, wt.clone(), window.clone(), format!("t{t}"), next.clone());
        x = next;
    }
    Ok(trace)
}
