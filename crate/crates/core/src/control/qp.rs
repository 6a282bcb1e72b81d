use nalgebra::DMatrix;

use crate::error::{dim_check, Error, Result};
use crate::linalg::{Mat, Vector};

use super::{RiccatiSolution, SystemModel};

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub inputs: Vec<Vector>,
    pub states: Vec<Vector>,
    /// Objective including the `x_0ᵀQx_0` term and terminal cost `x_NᵀPx_N`.
    pub objective: f64,
}

/// Solves the finite-horizon problem
/// `min Σ_{j<N} (x_jᵀQx_j + u_jᵀRu_j) + x_NᵀPx_N` s.t. `x_{j+1} = Ax_j + Bu_j + ŵ_j`
/// directly through its KKT system, with inputs and states both as variables.
///
/// Reference implementation for cross-checks; it never touches the Riccati
/// gains, only the terminal weight `P`.
pub fn finite_horizon_qp_oracle(
    model: &SystemModel,
    sol: &RiccatiSolution,
    x0: &Vector,
    what: &Mat,
    horizon: usize,
) -> Result<QpSolution> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let (n, m) = (model.n(), model.m());
    dim_check("initial state", n, x0.len())?;
    dim_check("forecast rows", horizon, what.nrows())?;
    dim_check("forecast width", n, what.ncols())?;

    let nu = horizon * m;
    let nz = nu + horizon * n;
    let nc = horizon * n;
    let dim = nz + nc;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = Vector::zeros(dim);

    let u_idx = |j: usize| j * m;
    // x_1 .. x_N
    let x_idx = |j: usize| nu + (j - 1) * n;

    for j in 0..horizon {
        kkt.view_mut((u_idx(j), u_idx(j)), (m, m)).copy_from(&(&model.r * 2.0));
    }
    for j in 1..=horizon {
        let weight = if j == horizon { &sol.p } else { &model.q };
        kkt.view_mut((x_idx(j), x_idx(j)), (n, n)).copy_from(&(weight * 2.0));
    }
    // x_{j+1} − A x_j − B u_j = ŵ_j   (x_0 moves to the right-hand side)
    for j in 0..horizon {
        let row = nz + j * n;
        let mut c = DMatrix::<f64>::zeros(n, nz);
        c.view_mut((0, x_idx(j + 1)), (n, n)).copy_from(&DMatrix::identity(n, n));
        c.view_mut((0, u_idx(j)), (n, m)).copy_from(&(-&model.b));
        let mut d: Vector = what.row(j).transpose();
        if j == 0 {
            d += &model.a * x0;
        } else {
            c.view_mut((0, x_idx(j)), (n, n)).copy_from(&(-&model.a));
        }
        kkt.view_mut((row, 0), (n, nz)).copy_from(&c);
        kkt.view_mut((0, row), (nz, n)).copy_from(&c.transpose());
        rhs.rows_mut(row, n).copy_from(&d);
    }

    let z = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("finite-horizon KKT system".into()))?;

    let inputs: Vec<Vector> = (0..horizon).map(|j| z.rows(u_idx(j), m).into_owned()).collect();
    let mut states = vec![x0.clone()];
    states.extend((1..=horizon).map(|j| z.rows(x_idx(j), n).into_owned()));
    let mut objective = 0.0;
    for j in 0..horizon {
        objective += states[j].dot(&(&model.q * &states[j])) + inputs[j].dot(&(&model.r * &inputs[j]));
    }
    objective += states[horizon].dot(&(&sol.p * &states[horizon]));
    Ok(QpSolution { inputs, states, objective })
}
