use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bounds::{corollary_bound, theorem1_rhs, BoundConstants, BoundPath};
use crate::control::{evaluate_cost, offline_optimal, rollout_mpc, tail_sums, RiccatiSolution};
use crate::error::{dim_check, Error, Result};
use crate::l2d::{
    prediction_jacobian, predict_window, scenario_weights_affine, window_end, AffineMixerParams,
    ContextFeatures, ScenarioLibrary,
};
use crate::linalg::{op_norm, project_ball, quad_form, Mat, Vector};
use crate::tuner::psi_jacobian;

pub const HINDSIGHT_TOL: f64 = 1e-10;
pub const HINDSIGHT_MAX_ITER: usize = 100_000;
pub const G_INFLATION: f64 = 1.5;
pub const LD_SAMPLES: usize = 256;

/// Exogenous record of an affine-path episode: everything needed to replay
/// it under any parameter sequence.
#[derive(Debug, Clone)]
pub struct AffineEpisode<'a> {
    pub sol: &'a RiccatiSolution,
    pub lib: &'a ScenarioLibrary,
    /// Supplies the bias, ball center and diameter; its θ is ignored.
    pub params: &'a AffineMixerParams,
    pub x0: Vector,
    pub disturbances: Vec<Vector>,
    pub feats: Vec<ContextFeatures>,
    pub k: usize,
}

impl AffineEpisode<'_> {
    pub fn horizon(&self) -> usize {
        self.disturbances.len()
    }

    fn check(&self) -> Result<()> {
        dim_check("context count", self.horizon(), self.feats.len())?;
        dim_check("initial state", self.sol.n(), self.x0.len())?;
        if self.k == 0 {
            return Err(Error::InvalidParameter("horizon k must be at least 1".into()));
        }
        Ok(())
    }

    /// Forecast rows used at step `t` under parameter `theta`.
    pub fn forecast(&self, t: usize, theta: &Vector) -> Result<Mat> {
        let p = scenario_weights_affine(&self.params.with_theta_vec(theta), &self.feats[t])?;
        Ok(predict_window(&p, self.lib, t, self.k, self.horizon())?.what)
    }
}

/// Closed-loop cost `J` of the MPC driven by the affine forecaster with
/// parameter `thetas[t]` at step t.
pub fn simulate_affine(ep: &AffineEpisode, thetas: &[Vector]) -> Result<f64> {
    ep.check()?;
    dim_check("parameter sequence length", ep.horizon(), thetas.len())?;
    let windows = (0..ep.horizon())
        .map(|t| ep.forecast(t, &thetas[t]))
        .collect::<Result<Vec<_>>>()?;
    let trace = rollout_mpc(ep.sol, &ep.x0, &windows, &ep.disturbances, ep.k)?;
    Ok(evaluate_cost(&trace, ep.sol))
}

/// `ψ_t(θ) = a_t − M_t θ` and `ψ_t − ψ̂_t = r_t` for every step; exact on
/// the affine path.
#[derive(Debug, Clone)]
pub struct PsiModel {
    pub a: Vec<Vector>,
    pub m: Vec<Mat>,
    pub tail: Vec<Vector>,
    pub j_star: f64,
    h: Mat,
    center: Vector,
    radius: f64,
}

impl PsiModel {
    pub fn build(ep: &AffineEpisode) -> Result<Self> {
        ep.check()?;
        let sol = ep.sol;
        let horizon = ep.horizon();
        let tails = tail_sums(sol, &ep.disturbances);
        let (_, j_star) = offline_optimal(sol, &ep.x0, &ep.disturbances)?;
        let zero = Vector::zeros(ep.params.dim());
        let mut a = Vec::with_capacity(horizon);
        let mut m = Vec::with_capacity(horizon);
        let mut tail = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let len = window_end(t, ep.k, horizon) - t + 1;
            let props = sol.propagators(len);
            let base = ep.forecast(t, &zero)?;
            let mut a_t = tails[t].clone();
            let mut r_t = tails[t].clone();
            for j in 0..len {
                a_t -= &props[j] * base.row(j).transpose();
                r_t -= &props[j] * &ep.disturbances[t + j];
            }
            let jac = prediction_jacobian(ep.params, &ep.feats[t], ep.lib, t, ep.k, horizon)?;
            m.push(psi_jacobian(sol, &jac, len));
            a.push(a_t);
            tail.push(r_t);
        }
        Ok(PsiModel {
            a,
            m,
            tail,
            j_star,
            h: sol.h.clone(),
            center: ep.params.center_vec(),
            radius: ep.params.radius(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn psi(&self, t: usize, theta: &Vector) -> Vector {
        &self.a[t] - &self.m[t] * theta
    }

    pub fn psi_hat(&self, t: usize, theta: &Vector) -> Vector {
        self.psi(t, theta) - &self.tail[t]
    }

    /// `J(θ) = J* + Σ ψ_t(θ)ᵀHψ_t(θ)`.
    pub fn objective(&self, theta: &Vector) -> f64 {
        self.j_star + (0..self.horizon()).map(|t| quad_form(&self.h, &self.psi(t, theta))).sum::<f64>()
    }

    /// Gradient of the tailored loss at step t.
    pub fn loss_gradient(&self, t: usize, theta: &Vector) -> Vector {
        -(self.m[t].transpose() * (&self.h * self.psi_hat(t, theta))) * 2.0
    }

    /// Exact loss discrepancy `‖2M_tᵀH r_t‖`; θ-independent on this path.
    pub fn loss_discrepancy(&self, t: usize) -> f64 {
        (self.m[t].transpose() * (&self.h * &self.tail[t])).norm() * 2.0
    }

    /// `max_t (‖∇L_t(θ_c)‖ + (D/2)‖2M_tᵀHM_t‖)`, inflated by 1.5.
    pub fn gradient_bound(&self) -> f64 {
        estimate_g(self)
    }
}

/// Bound on the tailored-loss gradient over the ball, inflated by 1.5×.
pub fn estimate_g(model: &PsiModel) -> f64 {
    let mut best: f64 = 0.0;
    for t in 0..model.horizon() {
        let curvature = op_norm(&(model.m[t].transpose() * &model.h * &model.m[t])) * 2.0;
        let at_center = model.loss_gradient(t, &model.center).norm();
        best = best.max(at_center + model.radius * curvature);
    }
    best * G_INFLATION
}

/// Certified minimizer of `J` over the parameter ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hindsight {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub grad_map_norm: f64,
    pub tolerance: f64,
    pub iterations: usize,
}

impl Hindsight {
    pub fn theta_vec(&self) -> Vector {
        Vector::from_vec(self.theta.clone())
    }
}

/// Accelerated projected gradient with adaptive restart on the convex
/// quadratic `J(θ)`; stops when the gradient mapping norm falls below
/// `1e-10·max(1, ‖∇J(θ_c)‖)`.
pub fn hindsight_theta(model: &PsiModel) -> Result<Hindsight> {
    let dim = model.center.len();
    let mut hess = Mat::zeros(dim, dim);
    let mut lin = Vector::zeros(dim);
    for t in 0..model.horizon() {
        let mth = model.m[t].transpose() * &model.h;
        hess += &mth * &model.m[t];
        lin += &mth * &model.a[t];
    }
    hess = (&hess + hess.transpose()) * 0.5;
    let grad = |theta: &Vector| (&hess * theta - &lin) * 2.0;
    let lip = 2.0 * hess.clone().symmetric_eigenvalues().max().max(0.0);
    let project = |v: &Vector| project_ball(v, &model.center, model.radius);
    let tolerance = HINDSIGHT_TOL * grad(&model.center).norm().max(1.0);
    let finish = |theta: Vector, gm: f64, iterations: usize| Hindsight {
        objective: model.objective(&theta),
        theta: theta.iter().copied().collect(),
        grad_map_norm: gm,
        tolerance,
        iterations,
    };
    if lip == 0.0 {
        return Ok(finish(model.center.clone(), 0.0, 0));
    }
    let mapping = |theta: &Vector| (theta - project(&(theta - grad(theta) / lip))).norm() * lip;
    let mut x = model.center.clone();
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    let mut gm = mapping(&x);
    for iter in 0..HINDSIGHT_MAX_ITER {
        if gm <= tolerance {
            return Ok(finish(x, gm, iter));
        }
        let next = project(&(&y - grad(&y) / lip));
        let restart = (&y - &next).dot(&(&next - &x)) > 0.0;
        if restart {
            momentum = 1.0;
            y = next.clone();
        } else {
            let m_next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
            y = &next + (&next - &x) * ((momentum - 1.0) / m_next);
            momentum = m_next;
        }
        x = next;
        gm = mapping(&x);
    }
    if gm <= tolerance {
        return Ok(finish(x, gm, HINDSIGHT_MAX_ITER));
    }
    Err(Error::NotConverged { grad_norm: gm })
}

/// Supremum of `‖2M(θ)ᵀH r‖` estimated on the center plus `samples` points
/// of the ball boundary, for forecasters whose Jacobian depends on θ.
#[allow(clippy::too_many_arguments)]
pub fn loss_discrepancy_sampled<R, F>(
    sol: &RiccatiSolution,
    tail: &Vector,
    len: usize,
    jacobian_at: F,
    center: &Vector,
    radius: f64,
    samples: usize,
    rng: &mut R,
) -> Result<f64>
where
    R: Rng,
    F: Fn(&Vector) -> Result<Mat>,
{
    let h_r = &sol.h * tail;
    let eval = |theta: &Vector| -> Result<f64> {
        let m = psi_jacobian(sol, &jacobian_at(theta)?, len);
        Ok((m.transpose() * &h_r).norm() * 2.0)
    };
    let mut best = eval(center)?;
    for _ in 0..samples {
        let mut dir = Vector::from_fn(center.len(), |_, _| rng.gen_range(-1.0..1.0));
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        dir *= radius / norm;
        best = best.max(eval(&(center + dir))?);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryRow {
    pub k: usize,
    pub bound: f64,
    pub path: BoundPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub horizon: usize,
    pub k: usize,
    pub j_alg: f64,
    pub j_hindsight: f64,
    pub j_star: f64,
    pub regret: f64,
    pub theta_star: Vec<f64>,
    pub psi_norms: Vec<f64>,
    pub loss_discrepancy: Vec<f64>,
    pub sum_ld: f64,
    pub theorem1_rhs: f64,
    pub constants: BoundConstants,
    pub corollary_bounds: Vec<CorollaryRow>,
}

/// Replays the episode under the recorded parameters and under `θ*`.
pub fn regret_report(
    ep: &AffineEpisode,
    model: &PsiModel,
    thetas: &[Vector],
    theta_star: &Vector,
    constants: &BoundConstants,
    k_table: usize,
) -> Result<RegretReport> {
    let horizon = ep.horizon();
    dim_check("parameter sequence length", horizon, thetas.len())?;
    dim_check("model horizon", horizon, model.horizon())?;
    let j_alg = simulate_affine(ep, thetas)?;
    let j_hindsight = simulate_affine(ep, &vec![theta_star.clone(); horizon])?;
    let psi_norms = (0..horizon).map(|t| model.psi(t, &thetas[t]).norm()).collect();
    let loss_discrepancy: Vec<f64> = (0..horizon).map(|t| model.loss_discrepancy(t)).collect();
    let sum_ld = loss_discrepancy.iter().sum();
    let corollary_bounds = (1..=k_table.max(ep.k))
        .map(|k| corollary_bound(constants, k).map(|(bound, path)| CorollaryRow { k, bound, path }))
        .collect::<Result<Vec<_>>>()?;
    Ok(RegretReport {
        horizon,
        k: ep.k,
        j_alg,
        j_hindsight,
        j_star: model.j_star,
        regret: j_alg - j_hindsight,
        theta_star: theta_star.iter().copied().collect(),
        psi_norms,
        loss_discrepancy,
        sum_ld,
        theorem1_rhs: theorem1_rhs(constants.d, constants.g, ep.k, horizon, sum_ld),
        constants: constants.clone(),
        corollary_bounds,
    })
}
