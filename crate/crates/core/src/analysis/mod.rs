//! Post-hoc evaluation: regret against the best fixed parameter in
//! hindsight, loss discrepancy, and the explicit regret and discrepancy bounds.

mod bounds;
mod regret;

pub use bounds::{
    corollary_bound, corollary_bound_gelfand, corollary_bound_norm, gelfand_constant, model_gradient_bound,
    select_horizon, theorem1_rhs, BoundConstants, BoundPath, GELFAND_HORIZON,
};
pub use regret::{
    estimate_g, hindsight_theta, loss_discrepancy_sampled, regret_report, simulate_affine, AffineEpisode,
    CorollaryRow, Hindsight, PsiModel, RegretReport, G_INFLATION, HINDSIGHT_MAX_ITER, HINDSIGHT_TOL, LD_SAMPLES,
};
