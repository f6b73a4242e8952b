//! Counterfactual explanations by latent-space search over a disentangled
//! generative model, with Fisher-information guided masks.

pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod harness;
pub mod models;
pub mod tensor;

pub use error::{Error, Result};
