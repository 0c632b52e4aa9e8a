//! Configuration, synthetic data, optimization and the training loop.

mod config;
mod data;
mod optim;
mod rng;
mod train;

pub use config::{Precision, TrainConfig};
pub use data::{sample_dataset, DatasetKind, GaussMix, MovingDot, SyntheticDataset};
pub use optim::{adam_step, Adam, AdamConfig, Moments};
pub use rng::{stream, Purpose};
pub use train::{
    copy_params, grow_network, projection_directions, sample_latents, train, EvalPoint,
    PhaseRecord, RunReport, Trainer, LOSS_LIMIT,
};
