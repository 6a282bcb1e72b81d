use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{quad_form, Mat, Vector};

use super::{RiccatiSolution, SystemModel};

/// Per-step record of a closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub k: usize,
    /// `x_0 ..= x_T`
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub disturbances: Vec<Vector>,
    /// Forecast matrix used at each step (rows = predicted steps).
    pub windows: Vec<Mat>,
    pub stage_costs: Vec<f64>,
    pub context_ids: Vec<String>,
}

impl EpisodeTrace {
    pub fn new(k: usize, x0: Vector) -> Self {
        EpisodeTrace {
            k,
            states: vec![x0],
            inputs: Vec::new(),
            disturbances: Vec::new(),
            windows: Vec::new(),
            stage_costs: Vec::new(),
            context_ids: Vec::new(),
        }
    }

    /// Appends step `t = self.horizon()`; `x_next` is the state after the transition.
    pub fn record(
        &mut self,
        model: &SystemModel,
        u: Vector,
        w: Vector,
        window: Mat,
        context_id: String,
        x_next: Vector,
    ) {
        let x = self.states.last().expect("trace holds x_0");
        self.stage_costs
            .push(quad_form(&model.q, x) + quad_form(&model.r, &u));
        self.inputs.push(u);
        self.disturbances.push(w);
        self.windows.push(window);
        self.context_ids.push(context_id);
        self.states.push(x_next);
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn terminal_state(&self) -> &Vector {
        self.states.last().expect("trace holds x_0")
    }

    /// Verifies lengths and the recursion `x_{t+1} = A x_t + B u_t + w_t`.
    pub fn check_transitions(&self, model: &SystemModel, tol: f64) -> Result<f64> {
        let t_len = self.inputs.len();
        if self.states.len() != t_len + 1
            || self.disturbances.len() != t_len
            || self.windows.len() != t_len
            || self.stage_costs.len() != t_len
            || self.context_ids.len() != t_len
        {
            return Err(Error::Dimension("trace lengths inconsistent with T".into()));
        }
        let mut worst: f64 = 0.0;
        for t in 0..t_len {
            let pred = &model.a * &self.states[t] + &model.b * &self.inputs[t] + &self.disturbances[t];
            worst = worst.max((pred - &self.states[t + 1]).amax());
        }
        if worst > tol {
            return Err(Error::Dimension(format!("transition defect {worst:e} exceeds {tol:e}")));
        }
        Ok(worst)
    }
}

/// `Σ_t (x_tᵀQx_t + u_tᵀRu_t) + x_TᵀPx_T`.
pub fn evaluate_cost(trace: &EpisodeTrace, sol: &RiccatiSolution) -> f64 {
    let model = sol.model();
    let running: f64 = trace
        .states
        .iter()
        .zip(&trace.inputs)
        .map(|(x, u)| quad_form(&model.q, x) + quad_form(&model.r, u))
        .sum();
    running + quad_form(&sol.p, trace.terminal_state())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::solve_dare_default;
    use nalgebra::{DMatrix, DVector};

    fn golden() -> RiccatiSolution {
        let one = DMatrix::from_element(1, 1, 1.0);
        let model = SystemModel::new(one.clone(), one.clone(), one.clone(), one, 1.0).unwrap();
        solve_dare_default(&model).unwrap()
    }

    #[test]
    fn zero_trace_costs_nothing() {
        let sol = golden();
        let mut trace = EpisodeTrace::new(1, DVector::zeros(1));
        for t in 0..5 {
            trace.record(
                sol.model(),
                DVector::zeros(1),
                DVector::zeros(1),
                DMatrix::zeros(1, 1),
                format!("{t}"),
                DVector::zeros(1),
            );
        }
        assert_eq!(evaluate_cost(&trace, &sol), 0.0);
    }

    #[test]
    fn one_step_direct_sum() {
        // q = r = 1, x = (1, 0), u = (0) → 1
        let sol = golden();
        let mut trace = EpisodeTrace::new(1, DVector::from_element(1, 1.0));
        trace.record(
            sol.model(),
            DVector::zeros(1),
            DVector::from_element(1, -1.0),
            DMatrix::zeros(1, 1),
            "c".into(),
            DVector::zeros(1),
        );
        assert!((evaluate_cost(&trace, &sol) - 1.0).abs() < 1e-15);
        assert!(trace.check_transitions(sol.model(), 1e-12).is_ok());
    }

    #[test]
    fn transition_defect_detected() {
        let sol = golden();
        let mut trace = EpisodeTrace::new(1, DVector::from_element(1, 1.0));
        trace.record(
            sol.model(),
            DVector::zeros(1),
            DVector::zeros(1),
            DMatrix::zeros(1, 1),
            "c".into(),
            DVector::from_element(1, 3.0),
        );
        assert!(trace.check_transitions(sol.model(), 1e-10).is_err());
    }
}
