use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_stabilizable, min_sym_eigenvalue, symmetry_defect, Mat};

/// Linear plant `x⁺ = A x + B u + w` with quadratic stage cost and a bound on ‖w‖.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    pub a: Mat,
    pub b: Mat,
    pub q: Mat,
    pub r: Mat,
    /// Disturbance norm bound W.
    pub w_bound: f64,
}

impl SystemModel {
    pub fn new(a: Mat, b: Mat, q: Mat, r: Mat, w_bound: f64) -> Result<Self> {
        let model = SystemModel { a, b, q, r, w_bound };
        model.validate()?;
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let m = self.b.ncols();
        if n == 0 || m == 0 {
            return Err(Error::InvalidModel("empty state or input dimension".into()));
        }
        if self.a.shape() != (n, n) {
            return Err(Error::InvalidModel(format!("A must be square, got {:?}", self.a.shape())));
        }
        if self.b.nrows() != n {
            return Err(Error::InvalidModel(format!("B must have {n} rows, got {}", self.b.nrows())));
        }
        if self.q.shape() != (n, n) || self.r.shape() != (m, m) {
            return Err(Error::InvalidModel("Q must be n×n and R m×m".into()));
        }
        if symmetry_defect(&self.r) > 1e-12 {
            return Err(Error::InvalidModel("R is not symmetric".into()));
        }
        if min_sym_eigenvalue(&self.r) < 1e-9 {
            return Err(Error::InvalidModel("R is not positive definite".into()));
        }
        if symmetry_defect(&self.q) > 1e-12 {
            return Err(Error::InvalidModel("Q is not symmetric".into()));
        }
        let q_min = min_sym_eigenvalue(&self.q);
        if q_min < -1e-10 {
            return Err(Error::InvalidModel("Q is not positive semidefinite".into()));
        }
        if q_min < 1e-12 {
            log::debug!("Q is only positive semidefinite (min eigenvalue {q_min:e})");
        }
        if !(self.w_bound > 0.0) {
            return Err(Error::InvalidModel("disturbance bound W must be positive".into()));
        }
        if !is_stabilizable(&self.a, &self.b) {
            return Err(Error::InvalidModel("(A, B) is not stabilizable".into()));
        }
        Ok(())
    }
}
