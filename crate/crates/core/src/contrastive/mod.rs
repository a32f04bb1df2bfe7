//! Contrastive encoder, negative construction, InfoNCE and the guidance
//! gradient.

pub mod encoder;
pub mod loss;
pub mod negatives;

pub use encoder::{ContrastiveEncoder, EncoderGuide};
pub use loss::{contrastive_training_scores, nce_loss, nce_loss_value, ContrastiveScores};
pub use negatives::{construct_negative_arrays, construct_negatives};
