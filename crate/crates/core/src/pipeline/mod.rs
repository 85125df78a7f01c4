//! Training orchestration, dual-mode inference, evaluation, persistence and
//! the command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod metrics;
pub mod models;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{load_config, overlay, parse_config_text, TrainConfig};
pub use data::{crop_positions, group_records, load_labelled, load_packs, load_patch, make_patches, PatchEntry, SamplePack};
pub use eval::{evaluate, EvalReport, MetricRow, PairResult};
pub use metrics::{psnr, ssim, PSNR_CAP};
pub use models::{Embedder, Mode, Restored, Restorer};
pub use train::{
    embedder_samples, feature_extractor, fit_embedder, save_restorer, smooth, thread_count, train_restorer, train_restorer_on, JsonlWriter,
    RunOptions, StepLog,
};
