//! Learning with noisy labels by prototype-based repartitioning.
//!
//! A short warm-up splits the training set into samples whose prediction
//! agrees with their label (confident) and the rest (unconfident). Class
//! prototypes built from the confident side then relabel unconfident samples
//! that lie close to a prototype, and the network keeps training with a
//! MixMatch-style semi-supervised objective.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod mixmatch;
pub mod net;
pub mod pipeline;
pub mod rng;
pub mod select;

pub use data::{
    generate_blobs, inject_ambiguity_noise, inject_factual_noise, BlobParams, LabeledView,
    NoiseSpec, NoiseType, NoisyDataset, Sample,
};
pub use error::{Error, Result};
pub use mixmatch::{augment, guess_labels, mixup, semi_train_epoch, sharpen, SemiConfig};
pub use net::{cosine_lr, cross_entropy, init_network, train_epoch, Network, TrainConfig};
pub use pipeline::{
    evaluate, export_embeddings, run_ablation, run_protosemi, PipelineConfig, RunOutput,
    RunReport, Variant,
};
pub use select::{
    build_prototypes, correction_probability, correction_stats, repartition,
    similarity_to_prototypes, split_by_agreement, CorrectionLog, Partition, PrototypeMatrix,
    StatsRow, Thresholds,
};
