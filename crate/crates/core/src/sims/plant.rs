use crate::control::RiccatiSolution;
use crate::error::{dim_check, Error, Result};
use crate::l2d::ScenarioLibrary;
use crate::linalg::{quad_form, Vector};

/// What one environment step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Input actually applied (after any clamping).
    pub u: Vector,
    pub x_next: Vector,
    /// Disturbance in the controller's coordinates: `x_next − Ax − Bu`.
    pub w: Vector,
    pub cost: f64,
}

/// An environment the MPC loop can drive.
pub trait Plant: Send {
    fn solution(&self) -> &RiccatiSolution;
    fn library(&self) -> &ScenarioLibrary;
    fn horizon(&self) -> usize;
    fn x0(&self) -> Vector;
    /// Scripted context for step `t`.
    fn context(&self, t: usize) -> String;
    fn apply(&mut self, t: usize, x: &Vector, u: Vector) -> Result<Transition>;
    /// Disturbances expected before the run (exact for exogenous plants);
    /// used to size the gradient bound.
    fn nominal_disturbances(&self) -> Vec<Vector>;
    /// Physical state for display (e.g. state of charge); defaults to `x`.
    fn display_state(&self, x: &Vector) -> Vector {
        x.clone()
    }
}

/// `x_{t+1} = Ax_t + Bu_t + w_t` with a prerecorded disturbance stream and
/// quadratic stage cost.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    sol: RiccatiSolution,
    lib: ScenarioLibrary,
    x0: Vector,
    disturbances: Vec<Vector>,
    contexts: Vec<String>,
}

impl LinearPlant {
    pub fn new(
        sol: RiccatiSolution,
        lib: ScenarioLibrary,
        x0: Vector,
        disturbances: Vec<Vector>,
        contexts: Vec<String>,
    ) -> Result<Self> {
        dim_check("initial state", sol.n(), x0.len())?;
        dim_check("library state dimension", sol.n(), lib.n())?;
        dim_check("context count", disturbances.len(), contexts.len())?;
        if disturbances.is_empty() {
            return Err(Error::InvalidParameter("episode horizon must be positive".into()));
        }
        for w in &disturbances {
            dim_check("disturbance length", sol.n(), w.len())?;
        }
        Ok(LinearPlant { sol, lib, x0, disturbances, contexts })
    }

    pub fn disturbances(&self) -> &[Vector] {
        &self.disturbances
    }

    pub fn contexts(&self) -> &[String] {
        &self.contexts
    }
}

impl Plant for LinearPlant {
    fn solution(&self) -> &RiccatiSolution {
        &self.sol
    }

    fn library(&self) -> &ScenarioLibrary {
        &self.lib
    }

    fn horizon(&self) -> usize {
        self.disturbances.len()
    }

    fn x0(&self) -> Vector {
        self.x0.clone()
    }

    fn context(&self, t: usize) -> String {
        self.contexts[t].clone()
    }

    fn apply(&mut self, t: usize, x: &Vector, u: Vector) -> Result<Transition> {
        let model = self.sol.model();
        let w = self.disturbances[t].clone();
        let x_next = &model.a * x + &model.b * &u + &w;
        let cost = quad_form(&model.q, x) + quad_form(&model.r, &u);
        Ok(Transition { u, x_next, w, cost })
    }

    fn nominal_disturbances(&self) -> Vec<Vector> {
        self.disturbances.clone()
    }
}
