//! Network assembly, training, evaluation and checkpoints.

mod checkpoint;
mod config;
mod graph;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Arch, LayerGroup, ModelConfig, TrainConfig};
pub use graph::{build_model, param_layout, ModelGraph, ParamSpec, Preprocessing};
pub use train::{evaluate, predict_normalized, predict_series, train, EpochRecord, History, SampleObjective};
