//! Loss assembly, Adam, checkpoints and the training loop.

pub mod checkpoint;
pub mod config;
pub mod losses;
pub mod optim;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use config::TrainConfig;
pub use losses::{geometric_losses, simple_loss, total_loss, LossComponents, LossWeights};
pub use optim::{Adam, AdamConfig};
pub use trainer::{load_examples, train, write_loss_csv, TrainOutcome, TrainRecord, Trainer, TrainingExample};
