use serde::{Deserialize, Serialize};

use crate::control::RiccatiSolution;
use crate::error::{Error, Result};
use crate::l2d::ScenarioLibrary;
use crate::linalg::{op_norm, Mat};

/// Largest power checked when fitting `‖Fᵗ‖ ≤ C ρᵗ`.
pub const GELFAND_HORIZON: usize = 200;

/// Which decay base a discrepancy bound used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundPath {
    Norm,
    Gelfand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub d: f64,
    pub g: f64,
    pub l: f64,
    pub w: f64,
    pub norm_p: f64,
    pub norm_h: f64,
    pub norm_f: f64,
    pub rho: f64,
    pub c_gelfand: f64,
}

/// `max_{t ≤ 200} ‖Fᵗ‖ / ρᵗ`.
pub fn gelfand_constant(f: &Mat, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("spectral radius {rho} outside (0, 1)")));
    }
    let mut power = Mat::identity(f.nrows(), f.ncols());
    let mut best: f64 = 1.0;
    for t in 1..=GELFAND_HORIZON {
        power = &power * f;
        best = best.max(op_norm(&power) / rho.powi(t as i32));
    }
    Ok(best)
}

/// `L = max_t ‖∂ŵ_{t+j}/∂θ‖` over forecast rows for unit-norm features:
/// the spectral norm of the n×|S| matrix of scenario rows at each step.
pub fn model_gradient_bound(lib: &ScenarioLibrary, horizon: usize) -> f64 {
    let mut best: f64 = 0.0;
    for t in 0..horizon {
        let rows = Mat::from_fn(lib.n(), lib.len(), |c, s| lib.bank(s, t, 1)[(0, c)]);
        best = best.max(op_norm(&rows));
    }
    best
}

impl BoundConstants {
    pub fn new(sol: &RiccatiSolution, d: f64, g: f64, l: f64, w: f64) -> Result<Self> {
        let c_gelfand = gelfand_constant(&sol.f, sol.rho_f)?;
        let out = BoundConstants {
            d,
            g,
            l,
            w,
            norm_p: op_norm(&sol.p),
            norm_h: op_norm(&sol.h),
            norm_f: sol.norm_f,
            rho: sol.rho_f,
            c_gelfand,
        };
        for (name, v) in [("D", d), ("G", g), ("L", l), ("W", w)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("bound constant {name} must be positive (got {v})")));
            }
        }
        Ok(out)
    }

    /// Checks `‖Fᵗ‖ ≤ C ρᵗ` for every `t ≤ 200`.
    pub fn gelfand_holds(&self, f: &Mat) -> bool {
        let mut power = Mat::identity(f.nrows(), f.ncols());
        for t in 0..=GELFAND_HORIZON {
            if op_norm(&power) > self.c_gelfand * self.rho.powi(t as i32) * (1.0 + 1e-12) {
                return false;
            }
            power = &power * f;
        }
        true
    }
}

/// `2LW‖P‖²‖H‖‖F‖ᵏ/(1−‖F‖)²`, valid when `‖F‖ < 1`.
pub fn corollary_bound_norm(c: &BoundConstants, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("horizon k must be at least 1".into()));
    }
    if c.norm_f >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "‖F‖ = {} ≥ 1; use the Gelfand form of the bound",
            c.norm_f
        )));
    }
    let lead = 2.0 * c.l * c.w * c.norm_p.powi(2) * c.norm_h;
    Ok(lead * c.norm_f.powi(k as i32) / (1.0 - c.norm_f).powi(2))
}

/// `2LW‖P‖²‖H‖C²ρᵏ/(1−ρ)²`.
pub fn corollary_bound_gelfand(c: &BoundConstants, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("horizon k must be at least 1".into()));
    }
    if !(c.rho < 1.0 && c.c_gelfand.is_finite()) {
        return Err(Error::InvalidParameter("no Gelfand constants available".into()));
    }
    let lead = 2.0 * c.l * c.w * c.norm_p.powi(2) * c.norm_h;
    Ok(lead * c.c_gelfand.powi(2) * c.rho.powi(k as i32) / (1.0 - c.rho).powi(2))
}

/// Norm form when `‖F‖ < 1`, Gelfand form otherwise.
pub fn corollary_bound(c: &BoundConstants, k: usize) -> Result<(f64, BoundPath)> {
    if c.norm_f < 1.0 {
        Ok((corollary_bound_norm(c, k)?, BoundPath::Norm))
    } else {
        Ok((corollary_bound_gelfand(c, k)?, BoundPath::Gelfand))
    }
}

/// `2GD√((k−½)T) + D·ΣLD + (k−1)GD`.
pub fn theorem1_rhs(d: f64, g: f64, k: usize, horizon: usize, sum_ld: f64) -> f64 {
    let kf = k as f64;
    2.0 * g * d * ((kf - 0.5) * horizon as f64).sqrt() + d * sum_ld + (kf - 1.0) * g * d
}

/// Smallest k with `ρᵏ ≤ 1/T`, i.e. `⌈ln T / ln(1/ρ)⌉`; the comparison
/// allows a relative slack of 1e-12 so exact powers are not pushed up by
/// rounding.
pub fn select_horizon(rho: f64, horizon: usize) -> Result<usize> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("spectral radius {rho} outside (0, 1)")));
    }
    if horizon < 2 {
        return Err(Error::InvalidParameter(format!("horizon T = {horizon} must be at least 2")));
    }
    let target = (horizon as f64).ln();
    let step = -rho.ln();
    let ok = |k: usize| k as f64 * step >= target * (1.0 - 1e-12);
    let mut k = ((target / step).ceil() as usize).max(1);
    while !ok(k) {
        k += 1;
    }
    while k > 1 && ok(k - 1) {
        k -= 1;
    }
    Ok(k)
}
