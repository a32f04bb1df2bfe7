//! Metric registry and the evaluation report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dancer::{generation_diversity, mmc_beat_alignment, motion_change_curve, pfc, DEFAULT_BEAT_SIGMA};
use super::frechet::frechet_distance;
use super::group::{gmc, gmr, tif, DEFAULT_COLLISION_RADIUS};
use crate::error::{Error, Result};
use crate::motion::{kinetic_features, GroupSequence, MotionSequence, Skeleton};

/// One second at 30 fps.
pub const DEFAULT_CHANGE_WINDOW: usize = 30;
pub const REASON_FEW_DANCERS: &str = "n_dancers < 2";
pub const REASON_NO_AUDIO: &str = "no audio supplied";

/// Generated and reference groups, plus music beats for each generated
/// group when audio is available.
pub struct EvalInput<'a> {
    pub generated: &'a [GroupSequence],
    pub reference: &'a [GroupSequence],
    pub beats: Option<&'a [Vec<usize>]>,
}

impl EvalInput<'_> {
    fn generated_dancers(&self) -> Vec<&MotionSequence> {
        self.generated.iter().flat_map(|g| g.dancers.iter()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricValue {
    Value(f64),
    Omitted(String),
}

pub trait Metric: Send + Sync {
    fn name(&self) -> &'static str;
    fn evaluate(&self, input: &EvalInput<'_>) -> Result<MetricValue>;
}

fn dancer_features(groups: &[GroupSequence]) -> Result<Vec<Vec<f64>>> {
    groups
        .iter()
        .flat_map(|g| g.dancers.iter())
        .map(|d| Ok(kinetic_features(d, Skeleton::smpl())?.to_vec()))
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean of a group metric over groups with at least two dancers.
fn multi_dancer_mean(groups: &[GroupSequence], f: impl Fn(&GroupSequence) -> Result<f64>) -> Result<MetricValue> {
    let vals = groups
        .iter()
        .filter(|g| g.n_dancers() >= 2)
        .map(f)
        .collect::<Result<Vec<_>>>()?;
    Ok(if vals.is_empty() {
        MetricValue::Omitted(REASON_FEW_DANCERS.into())
    } else {
        MetricValue::Value(mean(&vals))
    })
}

struct Fid;
struct Mmc;
struct GenDiv;
struct Pfc;
struct Gmr;
struct Gmc;
struct Tif;

impl Metric for Fid {
    fn name(&self) -> &'static str {
        "fid"
    }
    fn evaluate(&self, input: &EvalInput<'_>) -> Result<MetricValue> {
        Ok(MetricValue::Value(frechet_distance(
            &dancer_features(input.generated)?,
            &dancer_features(input.reference)?,
        )?))
    }
}

impl Metric for Mmc {
    fn name(&self) -> &'static str {
        "mmc"
    }
    fn evaluate(&self, input: &EvalInput<'_>) -> Result<MetricValue> {
        let Some(beats) = input.beats else {
            return Ok(MetricValue::Omitted(REASON_NO_AUDIO.into()));
        };
        if beats.len() != input.generated.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} beat lists for {} groups",
                beats.len(),
                input.generated.len()
            )));
        }
        let mut vals = Vec::new();
        for (g, b) in input.generated.iter().zip(beats) {
            for d in &g.dancers {
                vals.push(mmc_beat_alignment(d, b, DEFAULT_BEAT_SIGMA)?);
            }
        }
        Ok(MetricValue::Value(mean(&vals)))
    }
}

impl Metric for GenDiv {
    fn name(&self) -> &'static str {
        "gendiv"
    }
    fn evaluate(&self, input: &EvalInput<'_>) -> Result<MetricValue> {
        Ok(MetricValue::Value(generation_diversity(&input.generated_dancers())?))
    }
}

impl Metric for Pfc {
    fn name(&self) -> &'static str {
        "pfc"
    }
    fn evaluate(&self, input: &EvalInput<'_>) -> Result<MetricValue> {
        let vals = input
            .generated_dancers()
            .into_iter()
            .map(|d| pfc(d, Skeleton::smpl()))
            .collect::<Result<Vec<_>>>()?;
        if vals.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        Ok(MetricValue::Value(mean(&vals)))
    }
}

impl Metric for Gmr {
    fn name(&self) -> &'static str {
        "gmr"
    }
    fn evaluate(&self, input: &EvalInput<'_>) -> Result<MetricValue> {
        Ok(MetricValue::Value(gmr(input.generated, input.reference)?))
    }
}

impl Metric for Gmc {
    fn name(&self) -> &'static str {
        "gmc"
    }
    fn evaluate(&self, input: &EvalInput<'_>) -> Result<MetricValue> {
        multi_dancer_mean(input.generated, gmc)
    }
}

impl Metric for Tif {
    fn name(&self) -> &'static str {
        "tif"
    }
    fn evaluate(&self, input: &EvalInput<'_>) -> Result<MetricValue> {
        multi_dancer_mean(input.generated, |g| tif(g, DEFAULT_COLLISION_RADIUS))
    }
}

/// Ordered set of named metrics.
pub struct MetricRegistry {
    metrics: Vec<Box<dyn Metric>>,
}

impl MetricRegistry {
    pub fn empty() -> Self {
        MetricRegistry { metrics: Vec::new() }
    }

    /// fid, mmc, gendiv, pfc, gmr, gmc, tif.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Fid));
        r.register(Box::new(Mmc));
        r.register(Box::new(GenDiv));
        r.register(Box::new(Pfc));
        r.register(Box::new(Gmr));
        r.register(Box::new(Gmc));
        r.register(Box::new(Tif));
        r
    }

    /// Adds a metric, replacing any existing one of the same name.
    pub fn register(&mut self, metric: Box<dyn Metric>) {
        self.metrics.retain(|m| m.name() != metric.name());
        self.metrics.push(metric);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.metrics.iter().map(|m| m.name()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn Metric> {
        self.metrics
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "metric",
                name: name.to_string(),
            })
    }

    pub fn evaluate(&self, input: &EvalInput<'_>, change_window: usize) -> Result<MetricReport> {
        let mut report = MetricReport::default();
        for m in &self.metrics {
            match m.evaluate(input)? {
                MetricValue::Value(v) => {
                    report.values.insert(m.name().to_string(), v);
                }
                MetricValue::Omitted(reason) => {
                    report.omitted.insert(m.name().to_string(), reason);
                }
            }
        }
        report.motion_change = mean_change_curve(input.generated, change_window)?;
        Ok(report)
    }
}

/// Motion-change curve averaged over groups, truncated to the shortest.
pub fn mean_change_curve(groups: &[GroupSequence], window: usize) -> Result<Vec<f64>> {
    let curves = groups
        .iter()
        .map(|g| motion_change_curve(g, window))
        .collect::<Result<Vec<_>>>()?;
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    Ok((0..len).map(|f| curves.iter().map(|c| c[f]).sum::<f64>() / curves.len() as f64).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Metric name to value; absent metrics appear in `omitted`.
    #[serde(flatten)]
    pub values: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub omitted: BTreeMap<String, String>,
    #[serde(default)]
    pub motion_change: Vec<f64>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn motion_change_csv(&self) -> String {
        let mut s = String::from("frame,motion_change\n");
        for (f, v) in self.motion_change.iter().enumerate() {
            s.push_str(&format!("{f},{v}\n"));
        }
        s
    }

    /// `name=value` pairs on one line, omitted metrics shown as `-`.
    pub fn summary_line(&self, order: &[&str]) -> String {
        order
            .iter()
            .map(|n| match self.get(n) {
                Some(v) => format!("{n}={v:.4}"),
                None => format!("{n}=-"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json()?).map_err(|e| Error::io(json_path, e))?;
        std::fs::write(csv_path, self.motion_change_csv()).map_err(|e| Error::io(csv_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_group_dance, generate_music_track};

    fn groups(n: usize, dancers: usize) -> (Vec<GroupSequence>, Vec<Vec<usize>>) {
        let mut gs = Vec::new();
        let mut beats = Vec::new();
        for s in 0..n as u64 {
            let audio = generate_music_track(120.0, 3.0, 30, s).unwrap();
            gs.push(generate_group_dance(&audio, dancers, 0.8, s + 100).unwrap());
            beats.push(audio.beat_frames.clone());
        }
        (gs, beats)
    }

    #[test]
    fn self_evaluation() {
        let (gs, beats) = groups(4, 3);
        let reg = MetricRegistry::builtin();
        assert_eq!(reg.names(), vec!["fid", "mmc", "gendiv", "pfc", "gmr", "gmc", "tif"]);
        let r = reg
            .evaluate(
                &EvalInput {
                    generated: &gs,
                    reference: &gs,
                    beats: Some(&beats),
                },
                DEFAULT_CHANGE_WINDOW,
            )
            .unwrap();
        assert!(r.get("fid").unwrap() < 1e-5);
        assert!(r.get("gmr").unwrap() < 1e-5);
        let mmc = r.get("mmc").unwrap();
        assert!((0.0..=1.0).contains(&mmc));
        assert_eq!(r.motion_change.len(), 90 - DEFAULT_CHANGE_WINDOW);
        let json = r.to_json().unwrap();
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn omissions_are_reported() {
        let (gs, _) = groups(3, 1);
        let r = MetricRegistry::builtin()
            .evaluate(
                &EvalInput {
                    generated: &gs,
                    reference: &gs,
                    beats: None,
                },
                10,
            )
            .unwrap();
        assert_eq!(r.omitted.get("gmc").map(String::as_str), Some(REASON_FEW_DANCERS));
        assert_eq!(r.omitted.get("tif").map(String::as_str), Some(REASON_FEW_DANCERS));
        assert!(r.get("mmc").is_none());
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert!(json.get("mmc").is_none());
        assert!(json.get("fid").is_some());
    }

    #[test]
    fn registry_lookup() {
        let reg = MetricRegistry::builtin();
        assert_eq!(reg.get("tif").unwrap().name(), "tif");
        assert!(matches!(reg.get("bleu"), Err(Error::UnknownStrategy { kind: "metric", .. })));
    }
}
