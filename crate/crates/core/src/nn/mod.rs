//! Transformer building blocks and the group denoising network.

pub mod attention;
pub mod conditioning;
pub mod config;
pub mod denoiser;
pub mod layers;
pub mod model;
pub mod params;

pub use attention::{AttentionMask, MaskKind, MultiHeadAttention};
pub use config::ModelConfig;
pub use denoiser::Denoiser;
pub use model::{ConditionedDenoiser, GcdModel};
pub use params::{Builder, Init, ParamStore};
