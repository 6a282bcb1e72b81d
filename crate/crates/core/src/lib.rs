//! Context-driven disturbance prediction for closed-form MPC, with a
//! delayed online fine-tuning loop and regret analysis.

pub mod analysis;
pub mod control;
pub mod error;
pub mod l2d;
pub mod linalg;
pub mod par;
pub mod sims;
pub mod tuner;

pub use error::{Error, Result};
