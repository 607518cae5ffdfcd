//! Orchestration: configuration, the two-phase training protocol
//! (boundary labels, then saliency), inference, evaluation and the
//! annotation endpoint.

pub mod annotate;
mod checkpoint;
mod config;
mod stages;
mod train;

pub use checkpoint::{load_into, Checkpoint, CheckpointKind, CheckpointMeta, LoadReport, RunState, FORMAT_VERSION};
pub use config::{BlgConfig, TrainConfig};
pub use stages::{
    blg_generate, blg_train, classifier_from_checkpoint, evaluate, export_curves, infer, InferReport, Predictor,
};
pub use train::{load_training_samples, train, train_samples, TrainOptions, TrainOutcome, TrainSample};
