//! Counterfactual-driven group relative policy optimization on a synthetic
//! diagnostic world.
//!
//! The crate has five layers:
//!
//! - [`latent_model`]: the latent factor model of shortcut learning and its
//!   counterfactual-penalty rectification, as runnable gradient-descent
//!   experiments.
//! - [`counterfactual`]: raster images, lesion masks, Gaussian-blur and
//!   solid-fill lesion erasure, and spot-interference perturbation.
//! - [`rewards`]: format, clinical-cognition and diagnosis rewards.
//! - [`policy`] and [`grpo`]: a factored template policy with exact
//!   log-probabilities and KL, supervised fine-tuning, and GRPO.
//! - [`synthcorpus`] and [`experiments`]: the synthetic corpus and the
//!   experiment harness that ties everything together.

pub mod counterfactual;
pub mod error;
pub mod experiments;
pub mod grpo;
pub mod latent_model;
pub mod math;
pub mod observation;
pub mod policy;
pub mod rewards;
pub mod synthcorpus;

pub use error::{Error, Result};
