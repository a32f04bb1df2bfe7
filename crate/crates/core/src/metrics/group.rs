//! Group-level metrics: synchrony, collisions and group realism.

use crate::error::{Error, Result};
use crate::motion::kinematics::{kinetic_velocity, sequence_positions};
use crate::motion::{kinetic_features, GroupSequence, Skeleton, NUM_JOINTS};

use super::frechet::frechet_distance;

pub const DEFAULT_COLLISION_RADIUS: f64 = 0.25;
/// Mean and spread of kinetic features over dancers plus three spacing stats.
pub const GROUP_FEATURE_DIM: usize = 2 * NUM_JOINTS + 3;

/// Pearson correlation; zero when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (x, y) = (a[i] - ma, b[i] - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Mean pairwise lag-0 correlation of series, as a percentage.
pub fn gmc_from_series(series: &[Vec<f64>]) -> Result<f64> {
    let n = series.len();
    if n < 2 {
        return Err(Error::TooFewDancers(n));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += pearson(&series[i], &series[j]);
        }
    }
    Ok(100.0 * sum / (n * (n - 1) / 2) as f64)
}

/// Group motion correlation over per-dancer kinetic-velocity series.
pub fn gmc(group: &GroupSequence) -> Result<f64> {
    if group.n_dancers() < 2 {
        return Err(Error::TooFewDancers(group.n_dancers()));
    }
    if group.n_frames() < 2 {
        return Err(Error::SequenceTooShort { needed: 2, got: group.n_frames() });
    }
    let fps = group.fps() as f64;
    let series = group
        .dancers
        .iter()
        .map(|d| Ok(kinetic_velocity(&sequence_positions(d, Skeleton::smpl())?, fps)))
        .collect::<Result<Vec<_>>>()?;
    gmc_from_series(&series)
}

fn horizontal_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Fraction of frames where some pair of roots is closer than twice the
/// collision radius on the ground plane.
pub fn tif(group: &GroupSequence, collision_radius: f64) -> Result<f64> {
    let n = group.n_dancers();
    if n < 2 {
        return Err(Error::TooFewDancers(n));
    }
    let t = group.n_frames();
    if t == 0 {
        return Ok(0.0);
    }
    let limit = 2.0 * collision_radius;
    let hits = (0..t)
        .filter(|&f| {
            (0..n).any(|i| {
                (i + 1..n).any(|j| {
                    horizontal_distance(
                        &group.dancers[i].frames[f].root_translation,
                        &group.dancers[j].frames[f].root_translation,
                    ) < limit
                })
            })
        })
        .count();
    Ok(hits as f64 / t as f64)
}

/// `[mean_d KF, std_d KF, mean/min/max pairwise root distance]`; spacing
/// statistics average over frames and are zero for a single dancer.
pub fn group_features(group: &GroupSequence) -> Result<Vec<f64>> {
    let n = group.n_dancers();
    let kf = group
        .dancers
        .iter()
        .map(|d| kinetic_features(d, Skeleton::smpl()))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(GROUP_FEATURE_DIM);
    let means: Vec<f64> = (0..NUM_JOINTS).map(|j| kf.iter().map(|k| k[j]).sum::<f64>() / n as f64).collect();
    let stds: Vec<f64> = (0..NUM_JOINTS)
        .map(|j| (kf.iter().map(|k| (k[j] - means[j]).powi(2)).sum::<f64>() / n as f64).sqrt())
        .collect();
    out.extend(&means);
    out.extend(&stds);
    let t = group.n_frames();
    let (mut mean, mut min, mut max) = (0.0, 0.0, 0.0);
    if n >= 2 && t > 0 {
        for f in 0..t {
            let mut ds = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in i + 1..n {
                    ds.push(horizontal_distance(
                        &group.dancers[i].frames[f].root_translation,
                        &group.dancers[j].frames[f].root_translation,
                    ));
                }
            }
            mean += ds.iter().sum::<f64>() / ds.len() as f64;
            min += ds.iter().copied().fold(f64::INFINITY, f64::min);
            max += ds.iter().copied().fold(0.0, f64::max);
        }
        mean /= t as f64;
        min /= t as f64;
        max /= t as f64;
    }
    out.extend([mean, min, max]);
    Ok(out)
}

pub fn gmr(groups_a: &[GroupSequence], groups_b: &[GroupSequence]) -> Result<f64> {
    for set in [groups_a, groups_b] {
        if set.len() < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: set.len() });
        }
    }
    let fa = groups_a.iter().map(group_features).collect::<Result<Vec<_>>>()?;
    let fb = groups_b.iter().map(group_features).collect::<Result<Vec<_>>>()?;
    frechet_distance(&fa, &fb)
}
