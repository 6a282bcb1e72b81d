use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::linalg::{op_norm, spectral_radius, Mat};

use super::SystemModel;

pub const DARE_TOL: f64 = 1e-12;
pub const DARE_MAX_ITER: usize = 100_000;

/// DARE solution `P` together with the gains derived from it.
///
/// * `gain = (R + BᵀPB)⁻¹Bᵀ`
/// * `K = gain·P·A`, `F = A − BK`, `H = B·gain`
#[derive(Debug)]
pub struct RiccatiSolution {
    model: SystemModel,
    pub p: Mat,
    pub k: Mat,
    pub f: Mat,
    pub h: Mat,
    pub gain: Mat,
    pub rho_f: f64,
    pub norm_f: f64,
    pub iterations: usize,
    /// Frobenius residual of the DARE at the returned `P`.
    pub residual: f64,
    // (Fᵀ)ʲP for j = 0, 1, ..., grown on demand
    propagators: RwLock<Arc<Vec<Mat>>>,
}

impl Clone for RiccatiSolution {
    fn clone(&self) -> Self {
        RiccatiSolution {
            model: self.model.clone(),
            p: self.p.clone(),
            k: self.k.clone(),
            f: self.f.clone(),
            h: self.h.clone(),
            gain: self.gain.clone(),
            rho_f: self.rho_f,
            norm_f: self.norm_f,
            iterations: self.iterations,
            residual: self.residual,
            propagators: RwLock::new(self.propagators(0)),
        }
    }
}

fn riccati_map(model: &SystemModel, p: &Mat) -> Result<Mat> {
    let (a, b) = (&model.a, &model.b);
    let s = &model.r + b.transpose() * p * b;
    let bpa = b.transpose() * p * a;
    let sol = s
        .clone()
        .cholesky()
        .map(|c| c.solve(&bpa))
        .or_else(|| s.lu().solve(&bpa))
        .ok_or_else(|| Error::Singular("R + BᵀPB".into()))?;
    let next = &model.q + a.transpose() * p * a - bpa.transpose() * sol;
    Ok((&next + next.transpose()) * 0.5)
}

/// Fixed-point iteration `P ← Q + AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA` from `P₀ = Q`.
///
/// Stops once the Frobenius change between iterates drops below
/// `tol·(1 + ‖P‖_F)`.
pub fn solve_dare(model: &SystemModel, tol: f64, max_iter: usize) -> Result<RiccatiSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("DARE tolerance must be positive".into()));
    }
    let mut p = model.q.clone();
    let mut last_change = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let next = riccati_map(model, &p)?;
        last_change = (&next - &p).norm();
        p = next;
        iterations += 1;
        if last_change <= tol * (1.0 + p.norm()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::RiccatiNotConverged { iterations, last_change });
    }
    RiccatiSolution::from_p(model.clone(), p, iterations)
}

pub fn solve_dare_default(model: &SystemModel) -> Result<RiccatiSolution> {
    solve_dare(model, DARE_TOL, DARE_MAX_ITER)
}

impl RiccatiSolution {
    /// Derives the gains from a given `P`.
    pub fn from_p(model: SystemModel, p: Mat, iterations: usize) -> Result<Self> {
        let (a, b) = (&model.a, &model.b);
        let s = &model.r + b.transpose() * &p * b;
        let gain = s
            .lu()
            .solve(&b.transpose())
            .ok_or_else(|| Error::Singular("R + BᵀPB".into()))?;
        let k = &gain * &p * a;
        let f = a - b * &k;
        let h = b * &gain;
        let residual = (&p - riccati_map(&model, &p)?).norm();
        let rho_f = spectral_radius(&f);
        if rho_f >= 1.0 {
            return Err(Error::InvalidModel(format!(
                "closed loop is not stable (spectral radius {rho_f})"
            )));
        }
        let norm_f = op_norm(&f);
        Ok(RiccatiSolution {
            propagators: RwLock::new(Arc::new(vec![p.clone()])),
            model,
            p,
            k,
            f,
            h,
            gain,
            rho_f,
            norm_f,
            iterations,
            residual,
        })
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn m(&self) -> usize {
        self.model.m()
    }

    /// Residual bound `1e-9·(1 + ‖P‖_F)`.
    pub fn residual_ok(&self) -> bool {
        self.residual <= 1e-9 * (1.0 + self.p.norm())
    }

    /// `[(Fᵀ)⁰P, (Fᵀ)¹P, ..., (Fᵀ)^{len−1}P]`, computed by repeated
    /// multiplication and cached.
    pub fn propagators(&self, len: usize) -> Arc<Vec<Mat>> {
        {
            let cache = self.propagators.read().expect("propagator cache poisoned");
            if cache.len() >= len {
                return Arc::clone(&cache);
            }
        }
        let mut cache = self.propagators.write().expect("propagator cache poisoned");
        if cache.len() < len {
            let mut powers = (**cache).clone();
            let ft = self.f.transpose();
            while powers.len() < len {
                let next = &ft * powers.last().expect("cache starts with P");
                powers.push(next);
            }
            *cache = Arc::new(powers);
        }
        Arc::clone(&cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn scalar(a: f64, b: f64, q: f64, r: f64) -> SystemModel {
        SystemModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, r),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn no_future_coupling() {
        let sol = solve_dare_default(&scalar(0.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((sol.p[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn golden_ratio() {
        // P² − P − 1 = 0
        let sol = solve_dare_default(&scalar(1.0, 1.0, 1.0, 1.0)).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sol.p[(0, 0)] - phi).abs() < 1e-12);
        assert!(sol.residual_ok());
        assert!(sol.rho_f < 1.0);
    }

    #[test]
    fn gains_reproducible_from_p() {
        let sol = solve_dare_default(&scalar(1.2, 0.5, 2.0, 0.3)).unwrap();
        let (a, b, r, p) = (1.2, 0.5, 0.3, sol.p[(0, 0)]);
        let k = b * p * a / (r + b * b * p);
        assert!((sol.k[(0, 0)] - k).abs() < 1e-12);
        assert!((sol.f[(0, 0)] - (a - b * k)).abs() < 1e-12);
        assert!((sol.h[(0, 0)] - b * b / (r + b * b * p)).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_reports_last_change() {
        let err = solve_dare(&scalar(1.0, 1.0, 1.0, 1.0), 1e-300, 3).unwrap_err();
        match err {
            Error::RiccatiNotConverged { iterations, last_change } => {
                assert_eq!(iterations, 3);
                assert!(last_change > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn propagator_cache_matches_direct_powers() {
        let sol = solve_dare_default(&scalar(0.9, 1.0, 1.0, 0.5)).unwrap();
        let props = sol.propagators(6);
        let f = sol.f[(0, 0)];
        for (j, m) in props.iter().take(6).enumerate() {
            assert!((m[(0, 0)] - f.powi(j as i32) * sol.p[(0, 0)]).abs() < 1e-13);
        }
        assert!(sol.propagators(3).len() >= 6);
    }
}
