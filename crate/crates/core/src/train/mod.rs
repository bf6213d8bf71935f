//! Multi-resolution Chamfer loss, Adam, the step learning-rate schedule and
//! the epoch loop.

mod adam;
mod loss;
mod schedule;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use loss::{multi_scale_loss, multi_scale_loss_with_targets, Targets};
pub use schedule::lr_at;
pub use trainer::{
    epoch_batches, evaluate, sample_cd, sample_gradients, EpochStats, Sample, SampleGrad, TrainConfig, Trainer,
};
