//! Riccati machinery, the prediction-aware MPC law, cost evaluation and the
//! offline-optimal benchmark.

mod model;
mod mpc;
mod optimal;
mod qp;
mod riccati;
mod trace;

pub use model::SystemModel;
pub use mpc::{mpc_action, mpc_action_raw, rollout_mpc};
pub use optimal::{cost_gap_psi, offline_optimal, tail_sums};
pub use qp::{finite_horizon_qp_oracle, QpSolution};
pub use riccati::{solve_dare, solve_dare_default, RiccatiSolution, DARE_MAX_ITER, DARE_TOL};
pub use trace::{evaluate_cost, EpisodeTrace};
