//! Noise schedule, forward noising, reverse steps and sampling chains.

pub mod generate;
pub mod process;
pub mod sampler;
pub mod sampling;
pub mod schedule;

pub use generate::{sample_group_dance, sample_packed, tensor_to_group, SampleOutput};
pub use process::{
    guided_x0_for_ddim, posterior_mean_variance, q_sample, randn, reverse_step_ddim, reverse_step_ddpm,
    GuidanceConfig, GuidanceScore,
};
pub use sampler::{Ddim, Ddpm, ReverseSampler, SamplerOptions, SamplerRegistry};
pub use sampling::{run_chain_over, run_reverse_chain, ChainStep, X0Predictor};
pub use schedule::{NoiseSchedule, COSINE_OFFSET};
