//! Paired synthetic dataset on disk: `audio_NNNN.json`, `motion_NNNN.json`
//! and a `manifest.json` listing them.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dance::generate_group_dance;
use super::music::{generate_music_track, AudioFeatureSequence};
use crate::error::{Error, Result};
use crate::motion::{container, GroupSequence};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthDatasetSpec {
    pub n_sequences: usize,
    pub n_dancers_range: (usize, usize),
    pub bpm_range: (f64, f64),
    pub duration_s: f64,
    pub fps: u32,
    pub consistency_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthDatasetSpec {
    fn default() -> Self {
        SynthDatasetSpec {
            n_sequences: 500,
            n_dancers_range: (2, 5),
            bpm_range: (60.0, 150.0),
            duration_s: 5.0,
            fps: 30,
            consistency_range: (0.7, 1.0),
            seed: 0,
        }
    }
}

impl SynthDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let (nlo, nhi) = self.n_dancers_range;
        let (blo, bhi) = self.bpm_range;
        let (clo, chi) = self.consistency_range;
        if nlo == 0 || nlo > nhi {
            return Err(Error::InvalidArgument(format!("bad dancer range {nlo}..={nhi}")));
        }
        if !(blo > 0.0 && blo <= bhi) {
            return Err(Error::InvalidArgument(format!("bad bpm range {blo}..={bhi}")));
        }
        if !(0.0 <= clo && clo <= chi && chi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "bad consistency range {clo}..={chi}"
            )));
        }
        super::music::frames_for_duration(self.duration_s, self.fps)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub audio: String,
    pub motion: String,
    pub bpm: f64,
    pub n_dancers: usize,
    pub consistency: f64,
}

/// One generated pair plus the parameters that produced it. Beat periods are
/// whole frames so planted beats land exactly on frame indices.
pub struct SynthSample {
    pub audio: AudioFeatureSequence,
    pub group: GroupSequence,
    pub bpm: f64,
    pub consistency: f64,
}

/// Deterministic stream of samples for a spec (no disk access).
pub fn synth_samples(spec: &SynthDatasetSpec) -> Result<Vec<SynthSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fps = spec.fps as f64;
    let p_lo = (fps * 60.0 / spec.bpm_range.1).round().max(2.0) as u32;
    let p_hi = (fps * 60.0 / spec.bpm_range.0).round().max(p_lo as f64) as u32;
    (0..spec.n_sequences)
        .map(|_| {
            let period = rng.random_range(p_lo..=p_hi);
            let bpm = fps * 60.0 / period as f64;
            let n = rng.random_range(spec.n_dancers_range.0..=spec.n_dancers_range.1);
            let (clo, chi) = spec.consistency_range;
            let consistency = if chi > clo { rng.random_range(clo..=chi) } else { clo };
            let music_seed: u64 = rng.random();
            let dance_seed: u64 = rng.random();
            let audio = generate_music_track(bpm, spec.duration_s, spec.fps, music_seed)?;
            let group = generate_group_dance(&audio, n, consistency, dance_seed)?;
            Ok(SynthSample {
                audio,
                group,
                bpm,
                consistency,
            })
        })
        .collect()
}

pub fn build_dataset(spec: &SynthDatasetSpec, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = Vec::with_capacity(spec.n_sequences);
    for (i, s) in synth_samples(spec)?.into_iter().enumerate() {
        let audio_name = format!("audio_{i:04}.json");
        let motion_name = format!("motion_{i:04}.json");
        s.audio.write(&out_dir.join(&audio_name))?;
        container::write_json(&out_dir.join(&motion_name), &s.group)?;
        manifest.push(ManifestEntry {
            audio: audio_name,
            motion: motion_name,
            bpm: s.bpm,
            n_dancers: s.group.n_dancers(),
            consistency: s.consistency,
        });
    }
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub struct LoadedPair {
    pub entry: ManifestEntry,
    pub audio: AudioFeatureSequence,
    pub group: GroupSequence,
}

/// Loads every pair listed in a manifest. Entry paths are relative to the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<LoadedPair>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<ManifestEntry> = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let base: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    entries
        .into_iter()
        .map(|entry| {
            let audio = AudioFeatureSequence::read(&base.join(&entry.audio))?;
            let group = container::read_motion(&base.join(&entry.motion))?;
            Ok(LoadedPair { entry, audio, group })
        })
        .collect()
}
