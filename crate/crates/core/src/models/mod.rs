//! Networks, the β-TCVAE objective, training loops and checkpoints.

pub mod checkpoint;
pub mod mlp;
mod nets;
mod tcvae;
mod train;

pub use checkpoint::{load_classifier, load_oracle, load_vae, ModelCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{Activation, Linear, Mlp};
pub use nets::{
    argmax, reparameterize, rotation_bin, scale_bin, sigmoid, Classifier, LatentDecoder, LatentEncoder, LogitModel,
    Oracle, OracleOutput, ReconMode, Vae, EMBEDDING_DIM,
};
pub use tcvae::{cyclical_beta_schedule, gaussian_kl, mws_kl_terms, per_dim_kl, tcvae_loss, TcvaeParams, TcvaeTerms};
pub use train::{
    classifier_accuracy, oracle_accuracy, posteriors, reconstruction_l1, train_classifier, train_oracle, train_vae,
    OracleAccuracy, TrainConfig, TrainLog,
};
