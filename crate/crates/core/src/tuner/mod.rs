//! Closed-loop learning: the tailored loss, delayed projected online
//! gradient descent, preference pairs and the DPO step.

mod dpo;
mod loss;
mod ogd;
mod preference;

pub use dpo::{dpo_gradient, dpo_loss, dpo_update, DpoOutcome, PreferencePair};
pub use loss::{
    psi_hat, psi_jacobian, tailored_loss, tailored_loss_gradient, LossWindow, WindowBook,
};
pub use ogd::{learning_rate, project_theta, TunerState, UpdateRecord};
pub use preference::{build_preferences, PreferenceDataset, PreferenceItem};
