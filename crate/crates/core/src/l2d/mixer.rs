use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{Mat, Vector};

use super::{window_end, ContextFeatures, PredictionWindow, ScenarioLibrary};

/// Affine context-to-weight map `p = θ·φ + b` with θ confined to a ball
/// of diameter `D` around `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMixerParams {
    /// |𝒮| × d
    pub theta: Mat,
    pub bias: Vector,
    pub center: Mat,
    pub diameter: f64,
}

impl AffineMixerParams {
    pub fn new(theta: Mat, bias: Vector, center: Mat, diameter: f64) -> Result<Self> {
        if !(diameter > 0.0) {
            return Err(Error::InvalidParameter("ball diameter D must be positive".into()));
        }
        if theta.shape() != center.shape() {
            return Err(Error::Dimension("theta and center shapes differ".into()));
        }
        dim_check("bias length", theta.nrows(), bias.len())?;
        let params = AffineMixerParams { theta, bias, center, diameter };
        if (params.theta_vec() - params.center_vec()).norm() > params.radius() * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter("theta lies outside the feasible ball".into()));
        }
        Ok(params)
    }

    pub fn scenarios(&self) -> usize {
        self.theta.nrows()
    }

    pub fn features(&self) -> usize {
        self.theta.ncols()
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn radius(&self) -> f64 {
        self.diameter / 2.0
    }

    pub fn theta_vec(&self) -> Vector {
        flatten_theta(&self.theta)
    }

    pub fn center_vec(&self) -> Vector {
        flatten_theta(&self.center)
    }

    pub fn set_theta_vec(&mut self, v: &Vector) {
        self.theta = unflatten_theta(v, self.theta.nrows(), self.theta.ncols());
    }

    pub fn with_theta_vec(&self, v: &Vector) -> Self {
        let mut out = self.clone();
        out.set_theta_vec(v);
        out
    }
}

/// Row-major flattening: entry `(s, i)` ↦ index `s·d + i`.
pub fn flatten_theta(m: &Mat) -> Vector {
    let (rows, cols) = m.shape();
    Vector::from_fn(rows * cols, |idx, _| m[(idx / cols, idx % cols)])
}

pub fn unflatten_theta(v: &Vector, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |s, i| v[s * cols + i])
}

pub fn scenario_weights_affine(params: &AffineMixerParams, feats: &ContextFeatures) -> Result<Vector> {
    dim_check("feature dimension", params.features(), feats.phi.len())?;
    Ok(&params.theta * &feats.phi + &params.bias)
}

/// Softmax of `scorer·φ`, shifted by the max score.
pub fn scenario_weights_softmax(scorer: &Mat, feats: &ContextFeatures) -> Result<Vector> {
    dim_check("feature dimension", scorer.ncols(), feats.phi.len())?;
    let scores = scorer * &feats.phi;
    let top = scores.max();
    let exp = scores.map(|s| (s - top).exp());
    let total = exp.sum();
    Ok(exp / total)
}

/// `ŵ_{t:𝒯|t} = Σ_s p_s w^s_{t:𝒯}` with `𝒯 = min(t+k−1, T−1)`.
pub fn predict_window(
    weights: &Vector,
    lib: &ScenarioLibrary,
    t: usize,
    k: usize,
    horizon: usize,
) -> Result<PredictionWindow> {
    dim_check("weight count", lib.len(), weights.len())?;
    let t_end = window_end(t, k, horizon);
    let len = t_end - t + 1;
    let mut what = Mat::zeros(len, lib.n());
    for (s, p) in weights.iter().enumerate() {
        if *p != 0.0 {
            what += lib.bank(s, t, len) * *p;
        }
    }
    let bound = lib.w_bound() * (1.0 + 1e-12);
    let exceeds_bound = what.row_iter().any(|r| r.norm() > bound);
    Ok(PredictionWindow { t, t_end, what, jacobian: None, exceeds_bound })
}

/// Exact Jacobian of the row-major flattened forecast with respect to the
/// flattened θ on the affine path: entry `(j·n + c, s·d + i) = w^s[j][c]·φ_i`.
/// Independent of θ.
pub fn prediction_jacobian(
    params: &AffineMixerParams,
    feats: &ContextFeatures,
    lib: &ScenarioLibrary,
    t: usize,
    k: usize,
    horizon: usize,
) -> Result<Mat> {
    dim_check("scenario count", lib.len(), params.scenarios())?;
    dim_check("feature dimension", params.features(), feats.phi.len())?;
    let len = window_end(t, k, horizon) - t + 1;
    Ok(jacobian_from(&lib.banks(t, len), &Vector::from_element(lib.len(), 1.0), None, &feats.phi, lib.n()))
}

/// Jacobian of the softmax-path forecast with respect to the flattened scorer:
/// `∂ŵ/∂scorer_{r,i} = p_r (w^r − ŵ) φ_i`.
pub fn softmax_jacobian(
    scorer: &Mat,
    feats: &ContextFeatures,
    lib: &ScenarioLibrary,
    t: usize,
    k: usize,
    horizon: usize,
) -> Result<Mat> {
    let p = scenario_weights_softmax(scorer, feats)?;
    let len = window_end(t, k, horizon) - t + 1;
    let banks = lib.banks(t, len);
    let mut what = Mat::zeros(len, lib.n());
    for (bank, ps) in banks.iter().zip(p.iter()) {
        what += bank * *ps;
    }
    Ok(jacobian_from(&banks, &p, Some(&what), &feats.phi, lib.n()))
}

fn jacobian_from(banks: &[Mat], scale: &Vector, offset: Option<&Mat>, phi: &Vector, n: usize) -> Mat {
    let len = banks.first().map_or(0, |b| b.nrows());
    let d = phi.len();
    let mut jac = Mat::zeros(len * n, banks.len() * d);
    for (s, bank) in banks.iter().enumerate() {
        for j in 0..len {
            for c in 0..n {
                let base = bank[(j, c)] - offset.map_or(0.0, |o| o[(j, c)]);
                let v = scale[s] * base;
                if v == 0.0 {
                    continue;
                }
                for i in 0..d {
                    jac[(j * n + c, s * d + i)] = v * phi[i];
                }
            }
        }
    }
    jac
}
