//! Deterministic synthetic music features and group dances with known ground
//! truth (beat grid, planted consistency level).

pub mod dance;
pub mod dataset;
pub mod music;

pub use dance::generate_group_dance;
pub use dataset::{build_dataset, load_manifest, synth_samples, ManifestEntry, SynthDatasetSpec};
pub use music::{extract_music_beats, generate_music_track, AudioFeatureSequence, DEFAULT_AUDIO_DIM};
