//! Active-perception laboratory: a 2D occlusion-aware simulator, a latent
//! world model trained on synthetic trajectories, and planners that use the
//! model to refine coarse action proposals for language-specified object
//! localization.

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod model;
pub mod planning;
pub mod reward;
pub mod scene;

pub use error::{Error, Result};
