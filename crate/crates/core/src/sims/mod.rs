//! Seeded environments: the robot tracking task and the battery energy
//! task, scripted context streams, and the closed-loop episode runner.

mod context;
mod energy;
mod episode;
mod plant;
mod robot;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use context::{ContextEvent, ContextStream};
pub use energy::{
    energy_price, energy_step, piecewise_cost, Band, BatteryParams, EnergyEpisodeData, EnergyPlant,
    EnergyScenario, SurgeKind, Tariff, TariffBand, Weather,
};
pub use episode::{
    prior_mixer, prior_scorer, run_episode, EpisodeOutcome, EpisodeRunner, LearnerConfig, ModelChoice,
    StepRecord, TunerChoice, Variant,
};
pub use plant::{LinearPlant, Plant, Transition};
pub use robot::{
    astroid_target, make_robot_system, push_direction, robot_disturbance, robot_matrices, RobotEpisodeData,
    RobotScenario, CALM_TEXT, GUST_STEPS,
};

use crate::error::Result;

/// Gradient scale in the robot experiment's step size.
pub const ROBOT_STEP_G: f64 = 20.0;

/// Independent stream `index` of the generator seeded by `master`.
pub fn episode_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "lowercase")]
pub enum Preset {
    Robot(RobotScenario),
    Energy(EnergyScenario),
}

impl Preset {
    pub fn horizon(&self) -> usize {
        match self {
            Preset::Robot(r) => r.horizon,
            Preset::Energy(e) => e.horizon(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Preset::Robot(r) => r.validate(),
            Preset::Energy(e) => e.validate(),
        }
    }

    /// Prediction horizon used by the experiment: a few steps for the robot,
    /// one day ahead for the battery.
    pub fn default_k(&self) -> usize {
        match self {
            Preset::Robot(_) => 5,
            Preset::Energy(e) => e.steps_per_day,
        }
    }

    /// Learner settings used by the experiment. The robot run uses a smaller
    /// gradient scale in the step size than the worst-case estimate.
    pub fn default_learner(&self) -> LearnerConfig {
        match self {
            Preset::Robot(_) => LearnerConfig { g: Some(ROBOT_STEP_G), ..Default::default() },
            Preset::Energy(_) => LearnerConfig::default(),
        }
    }

    /// The plant for episode `index` under master seed `master`.
    pub fn plant(&self, master: u64, index: u64) -> Result<Box<dyn Plant>> {
        let mut rng = episode_rng(master, index);
        Ok(match self {
            Preset::Robot(r) => Box::new(r.plant(&mut rng)?),
            Preset::Energy(e) => Box::new(e.plant(&mut rng)?),
        })
    }
}
