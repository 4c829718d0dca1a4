//! End-to-end model, training loop, embedding extraction and run configuration.

mod config;
mod model;
mod train;

pub use config::TrainConfig;
pub use model::{prepare_clip, pyramid_spec, stack_clips, JointsGait, LossRecord};
pub use train::{checkpoint_path, embed_index, run_training, TrainOutputs, Trainer, LOSS_HEADER};
