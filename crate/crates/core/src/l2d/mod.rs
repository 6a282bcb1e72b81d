//! Language-to-distribution: context text → scenario weights → k-step
//! disturbance forecast.

pub mod external;
mod features;
mod library;
mod mixer;
mod window;

pub use features::{context_id, featurize, ContextFeatures, Vocabulary};
pub use library::{
    Generator, Scenario, ScenarioLibrary, ScenarioSpec, TrajectoryBank,
    TrajectorySpec,
};
pub use mixer::{
    flatten_theta, prediction_jacobian, predict_window, scenario_weights_affine,
    scenario_weights_softmax, softmax_jacobian, unflatten_theta, AffineMixerParams,
};
pub use window::{window_end, PredictionWindow};
