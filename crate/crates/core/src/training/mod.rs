//! Two-stage training: stage 1 fits the CNN/attention forecaster, stage 2
//! fits the refinement head to stage-1 residuals with stage 1 frozen.

mod checkpoint;
mod loss;
mod schedule;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{batch_loss, loss_graph, mse_day_loss};
pub use schedule::{lr_schedule, StageSchedule};
pub use trainer::{
    epoch_permutation, resume, train_stage1, train_stage2, write_loss_csv, LossRecord, TrainOptions, TrainReport,
};

use thiserror::Error;

use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("non-finite loss in stage {stage}, epoch {epoch}, batch {batch}")]
    NonFiniteLoss { stage: u8, epoch: usize, batch: usize },
    #[error("stage-1 parameter `{0}` changed during stage-2 training")]
    StageOneDrift(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;
