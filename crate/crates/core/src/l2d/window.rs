use serde::{Deserialize, Serialize};

use crate::linalg::{Mat, Vector};

/// `𝒯 = min(t + k − 1, T − 1)`.
pub fn window_end(t: usize, k: usize, horizon: usize) -> usize {
    (t + k - 1).min(horizon - 1)
}

/// Forecast `ŵ_{t:𝒯|t}`; row j predicts the disturbance at step `t + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionWindow {
    pub t: usize,
    pub t_end: usize,
    pub what: Mat,
    /// ∂(row-major flattened forecast)/∂θ when the model exposes it.
    pub jacobian: Option<Mat>,
    /// Some row exceeds the disturbance bound W (possible on the affine path).
    pub exceeds_bound: bool,
}

impl PredictionWindow {
    pub fn zeros(t: usize, k: usize, horizon: usize, n: usize) -> Self {
        let t_end = window_end(t, k, horizon);
        PredictionWindow {
            t,
            t_end,
            what: Mat::zeros(t_end - t + 1, n),
            jacobian: None,
            exceeds_bound: false,
        }
    }

    pub fn len(&self) -> usize {
        self.what.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.what.nrows() == 0
    }

    pub fn row(&self, j: usize) -> Vector {
        self.what.row(j).transpose()
    }
}
