//! Loss composition, AdamW training and checkpoints.

mod checkpoint;
mod config;
mod graph;
mod loss;
mod model;
mod optim;
mod run;

pub use checkpoint::{Checkpoint, LossRecord, CHECKPOINT_FORMAT};
pub use config::{AblationMode, Dims, TrainConfig};
pub use graph::{batch_loss, batch_loss_and_grad, batch_loss_terms};
pub use loss::{loss_align, loss_rec, LossBreakdown};
pub use model::{ModelParams, BLOCK_NAMES};
pub use optim::{adamw_step, AdamWConfig, Moments};
pub use run::{
    draw_noise, gradcheck, gradcheck_case, train, trainable_blocks, write_loss_csv, GradcheckCase, TrainState,
};
