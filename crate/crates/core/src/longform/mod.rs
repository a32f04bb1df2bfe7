//! Long-duration generation by overlapping chunks denoised in lockstep.

pub mod blend;
pub mod generate;
pub mod hungarian;
pub mod plan;

pub use blend::{blend_overlap, crossfade};
pub use generate::{generate_long, generate_long_detailed, LongOutput, DEFAULT_WINDOW_FRAMES};
pub use hungarian::{match_dancers_hungarian, DancerAssignment};
pub use plan::{chunk_schedule, ChunkPlan};
