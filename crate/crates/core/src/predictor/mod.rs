//! Cascaded trajectory-then-beam predictor.
//!
//! Sensing encoders turn GPS, a point cloud, and the task mode into per-slot
//! tokens; a gated cross-attention fuses them; a causal attention stack with
//! learned future queries feeds a cumulative-offset trajectory head and three
//! decoupled beam classifiers.

mod baseline;
mod config;
mod loss;
mod model;
mod train;

pub use baseline::{baseline_cv_geometric, BaselinePrediction};
pub use config::{ModelConfig, Normalization, MODEL_CONFIG_VERSION};
pub use loss::{beam_loss, combined_loss, sequence_loss, soft_kl, trajectory_l1, trajectory_loss, LossTerms, Sample};
pub use model::{canonical_cloud, standardize_cloud, ForwardOutput, Modality, Model, Observation};
pub use train::{
    batch_loss, evaluate, evaluate_baseline, gradcheck_model, load_model, predict, read_train_log, save_model, train,
    write_train_log, EpochLog, Prediction, TrainOptions, TrainOutcome, CHECKPOINT_FILE, CONFIG_FILE, TRAIN_LOG_FILE,
};

#[cfg(test)]
mod tests;
