use std::fs;
use std::path::{Path, PathBuf};

use gcd_core::diffusion::{sample_group_dance, SamplerOptions, SamplerRegistry};
use gcd_core::error::{Error, Result};
use gcd_core::longform::generate_long;
use gcd_core::metrics::{motion_change_curve, EvalInput, MetricRegistry};
use gcd_core::motion::container::{read_motion, write_binary, write_json};
use gcd_core::motion::kinematics::{kinetic_velocity, sequence_positions};
use gcd_core::motion::{GroupSequence, Skeleton, DEFAULT_FPS};
use gcd_core::synth::dataset::MANIFEST_FILE;
use gcd_core::synth::music::frames_for_duration;
use gcd_core::synth::{build_dataset, extract_music_beats, generate_music_track, AudioFeatureSequence, SynthDatasetSpec};
use gcd_core::train::{load_checkpoint, train as run_training, TrainConfig};

use crate::svg::{line_chart, Series};
use crate::{EvaluateArgs, GenerateArgs, PlotArgs, SynthDataArgs, TrainArgs};

pub const MUSIC_FILE: &str = "music.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn synth_data(a: &SynthDataArgs) -> Result<()> {
    let spec = SynthDatasetSpec {
        n_sequences: a.n,
        n_dancers_range: (a.min_dancers, a.max_dancers),
        bpm_range: (a.min_bpm, a.max_bpm),
        duration_s: a.duration,
        fps: a.fps,
        consistency_range: (a.min_consistency, a.max_consistency),
        seed: a.seed,
    };
    let manifest = build_dataset(&spec, &a.out)?;
    println!("wrote {} pairs to {}", manifest.len(), a.out.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    for kv in &a.overrides {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects key=value, got {kv:?}")))?;
        config.set(key.trim(), value.trim())?;
    }
    if let Some(v) = a.iterations {
        config.iterations = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.lr {
        config.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.window {
        config.window = v;
    }
    if let Some(v) = a.negatives {
        config.negatives = v;
    }
    if let Some(v) = a.checkpoint_every {
        config.checkpoint_every = v;
    }
    config.use_geo &= !a.no_geo;
    config.use_nce &= !a.no_nce;
    config.use_group_attention &= !a.no_group_attention;
    config.validate()?;
    let manifest = if a.data.is_dir() { a.data.join(MANIFEST_FILE) } else { a.data.clone() };
    let outcome = run_training(&manifest, config, &a.out, a.resume.as_deref())?;
    match outcome.history.last() {
        Some(r) => println!(
            "iteration {} l_simple={:.6} total={:.6}; checkpoint {}",
            r.iteration,
            r.losses.simple,
            r.total,
            outcome.checkpoint.display()
        ),
        None => println!("no iterations run; checkpoint {}", outcome.checkpoint.display()),
    }
    Ok(())
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let window = a.window.unwrap_or(ck.meta.train.window);
    let (model, sched) = ck.into_model()?;
    let sampler = SamplerRegistry::builtin().build(
        &a.sampler,
        &SamplerOptions {
            ddim_steps: a.ddim_steps,
        },
    )?;
    create_dir(&a.out)?;
    let audio = match (&a.music, a.synthetic_bpm) {
        (Some(path), _) => {
            let audio = AudioFeatureSequence::read(path)?;
            match a.duration {
                Some(d) => {
                    let frames = frames_for_duration(d, audio.fps)?;
                    if frames > audio.n_frames() {
                        return Err(Error::InvalidArgument(format!(
                            "music has {} frames, {frames} requested",
                            audio.n_frames()
                        )));
                    }
                    audio.crop(0, frames)
                }
                None => audio,
            }
        }
        (None, Some(bpm)) => {
            let duration = a.duration.unwrap_or(window as f64 / DEFAULT_FPS as f64);
            let audio = generate_music_track(bpm, duration, DEFAULT_FPS, a.seed)?;
            audio.write(&a.out.join(MUSIC_FILE))?;
            audio
        }
        (None, None) => return Err(Error::InvalidArgument("need --music or --synthetic-bpm".into())),
    };
    let frames = audio.n_frames();
    for i in 0..a.samples {
        let seed = a.seed.wrapping_add(i as u64);
        let group = if frames > window {
            generate_long(&model, &sched, &audio, a.dancers, window, sampler.as_ref(), a.gamma, seed)?
        } else {
            sample_group_dance(&model, &sched, &audio, a.dancers, frames, sampler.as_ref(), a.gamma, seed)?
        };
        let path = if a.binary {
            let p = a.out.join(format!("sample_{i:03}.gcdm"));
            write_binary(&p, &group)?;
            p
        } else {
            let p = a.out.join(format!("sample_{i:03}.json"));
            write_json(&p, &group)?;
            p
        };
        println!("{}: {} dancers x {} frames", path.display(), group.n_dancers(), group.n_frames());
    }
    Ok(())
}

fn is_audio_name(name: &str) -> bool {
    name.starts_with("audio") || name.starts_with("music")
}

fn sorted_files(dir: &Path, keep: impl Fn(&str) -> bool) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if path.is_file() && keep(name) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Motion containers in a directory, in name order. Audio files and the
/// dataset manifest are skipped.
pub fn read_motion_dir(dir: &Path) -> Result<Vec<GroupSequence>> {
    let files = sorted_files(dir, |name| {
        (name.ends_with(".json") || name.ends_with(".gcdm")) && name != MANIFEST_FILE && !is_audio_name(name)
    })?;
    if files.is_empty() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            detail: "no motion containers found".into(),
        });
    }
    files.iter().map(|f| read_motion(f)).collect()
}

fn beats_for(audio: &Path, n_groups: usize) -> Result<Vec<Vec<usize>>> {
    if !audio.is_dir() {
        let beats = extract_music_beats(&AudioFeatureSequence::read(audio)?);
        return Ok(vec![beats; n_groups]);
    }
    let files = sorted_files(audio, |name| name.ends_with(".json") && is_audio_name(name))?;
    if files.len() != n_groups {
        return Err(Error::InvalidArgument(format!(
            "{} audio files for {n_groups} generated groups",
            files.len()
        )));
    }
    files
        .iter()
        .map(|f| Ok(extract_music_beats(&AudioFeatureSequence::read(f)?)))
        .collect()
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let generated = read_motion_dir(&a.generated)?;
    let reference = read_motion_dir(&a.reference)?;
    let beats = a.audio.as_deref().map(|p| beats_for(p, generated.len())).transpose()?;
    let registry = MetricRegistry::builtin();
    let report = registry.evaluate(
        &EvalInput {
            generated: &generated,
            reference: &reference,
            beats: beats.as_deref(),
        },
        a.change_window,
    )?;
    create_dir(&a.out)?;
    report.write(&a.out.join("report.json"), &a.out.join("motion_change.csv"))?;
    let mut csv = String::from("metric,value,note\n");
    for name in registry.names() {
        match (report.get(name), report.omitted.get(name)) {
            (Some(v), _) => csv.push_str(&format!("{name},{v},\n")),
            (None, Some(reason)) => csv.push_str(&format!("{name},,{reason}\n")),
            (None, None) => {}
        }
    }
    write_text(&a.out.join("report.csv"), &csv)?;
    println!("{}", report.summary_line(&registry.names()));
    Ok(())
}

pub fn plot(a: &PlotArgs) -> Result<()> {
    let group = read_motion(&a.motion)?;
    let audio = AudioFeatureSequence::read(&a.audio)?;
    let fps = group.fps() as f64;
    let beats = extract_music_beats(&audio);
    let curves = group
        .dancers
        .iter()
        .map(|d| Ok(kinetic_velocity(&sequence_positions(d, Skeleton::smpl())?, fps)))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&a.out)?;

    let mut csv = String::from("frame,time_s");
    for i in 0..curves.len() {
        csv.push_str(&format!(",dancer_{i}"));
    }
    csv.push('\n');
    for f in 0..group.n_frames() {
        csv.push_str(&format!("{f},{}", f as f64 / fps));
        for c in &curves {
            csv.push_str(&format!(",{}", c[f]));
        }
        csv.push('\n');
    }
    write_text(&a.out.join("kinetic_velocity.csv"), &csv)?;

    let mut csv = String::from("frame,time_s\n");
    for &b in &beats {
        csv.push_str(&format!("{b},{}\n", b as f64 / fps));
    }
    write_text(&a.out.join("beats.csv"), &csv)?;

    let series: Vec<Series> = curves
        .iter()
        .enumerate()
        .map(|(i, c)| Series {
            label: format!("dancer {i}"),
            points: c.iter().enumerate().map(|(f, v)| (f as f64 / fps, *v)).collect(),
        })
        .collect();
    let markers: Vec<f64> = beats.iter().filter(|&&b| b < group.n_frames()).map(|&b| b as f64 / fps).collect();
    write_text(
        &a.out.join("kinetic_velocity.svg"),
        &line_chart("Kinetic velocity", "time [s]", "velocity [m/s]", &series, &markers),
    )?;

    match motion_change_curve(&group, a.change_window) {
        Ok(curve) => {
            let mut csv = String::from("frame,time_s,motion_change\n");
            for (f, v) in curve.iter().enumerate() {
                csv.push_str(&format!("{f},{},{v}\n", f as f64 / fps));
            }
            write_text(&a.out.join("motion_change.csv"), &csv)?;
            let series = [Series {
                label: "motion change".into(),
                points: curve.iter().enumerate().map(|(f, v)| (f as f64 / fps, *v)).collect(),
            }];
            write_text(
                &a.out.join("motion_change.svg"),
                &line_chart("Motion change", "time [s]", "change [m²/s²]", &series, &[]),
            )?;
        }
        Err(Error::SequenceTooShort { needed, got }) => {
            eprintln!("motion change skipped: {got} frames, window needs {needed}");
        }
        Err(e) => return Err(e),
    }
    println!("plots written to {}", a.out.display());
    Ok(())
}
