//! Music-driven group choreography with contrastive diffusion.
//!
//! The crate covers the whole pipeline: a synthetic paired music/dance
//! generator, the diffusion process and samplers, the transformer denoiser
//! with group modulation, the contrastive encoder used for consistency /
//! diversity guidance, training, long-form chunked generation and the
//! evaluation metrics.

pub mod contrastive;
pub mod diffusion;
pub mod error;
pub mod longform;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
