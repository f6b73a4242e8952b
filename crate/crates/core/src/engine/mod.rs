//! Counterfactual search over latent perturbations.

mod bundle;
mod explain;
mod fisher;
mod interpolate;
mod losses;
mod masks;

pub use bundle::{pgm_bytes, write_bundle, write_pgm, BundleMeta, BundleSummary, Interpolated};
pub use explain::{
    build_objective, generate_explanations, masks_for, objective_and_grad, EngineConfig, Explanation, Method,
    Objective, PerturbationSet, StepRecord,
};
pub use fisher::{estimate_fisher, FisherBudget, FisherEstimate, FISHER_MAGIC, FISHER_VERSION};
pub use interpolate::interpolate_target;
pub use losses::{bce, bce_logit, cf_terms, diversity, loss_div, loss_prox, prox_terms, LOGIT_CLAMP};
pub use masks::{fisher_chunk_masks, fisher_chunks, random_masks, spectral_masks, ChunkMode, MaskSet};
