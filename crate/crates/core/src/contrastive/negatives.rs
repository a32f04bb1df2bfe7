//! Negative groups built by swapping dancers in from other sequences.

use ndarray::{s, Array3, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::motion::GroupSequence;

/// Copies `donor` (T_d × 147) into `slot`, cropping from frame 0 and
/// repeating the donor's last frame when it is shorter.
fn fill_slot(mut slot: ndarray::ArrayViewMut2<'_, f64>, donor: ArrayView2<'_, f64>) {
    let t = slot.nrows();
    let td = donor.nrows();
    for f in 0..t {
        slot.row_mut(f).assign(&donor.row(f.min(td - 1)));
    }
}

/// `k` mixed copies of `groups[anchor]`. Each dancer slot is independently
/// replaced with probability `replace_prob` by a dancer drawn uniformly from
/// all dancers of the other groups. A copy with no replaced slot is redrawn.
pub fn construct_negative_arrays<R: Rng + ?Sized>(
    groups: &[Array3<f64>],
    anchor: usize,
    replace_prob: f64,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Array3<f64>>> {
    if !(replace_prob > 0.0 && replace_prob <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "replace probability must lie in (0, 1], got {replace_prob}"
        )));
    }
    let base = groups
        .get(anchor)
        .ok_or_else(|| Error::InvalidArgument(format!("anchor {anchor} out of range")))?;
    let donors: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .filter(|&(g, a)| g != anchor && a.shape()[1] > 0)
        .flat_map(|(g, a)| (0..a.shape()[0]).map(move |d| (g, d)))
        .collect();
    if donors.is_empty() {
        return Err(Error::InsufficientDonors);
    }
    let n = base.shape()[0];
    (0..k)
        .map(|_| loop {
            let mut mixed = base.clone();
            let mut replaced = 0;
            for slot in 0..n {
                if rng.random_bool(replace_prob) {
                    let (g, d) = donors[rng.random_range(0..donors.len())];
                    fill_slot(mixed.slice_mut(s![slot, .., ..]), groups[g].slice(s![d, .., ..]));
                    replaced += 1;
                }
            }
            if replaced > 0 {
                break Ok(mixed);
            }
        })
        .collect()
}

pub fn construct_negatives<R: Rng + ?Sized>(
    batch: &[GroupSequence],
    anchor: usize,
    replace_prob: f64,
    k: usize,
    rng: &mut R,
) -> Result<Vec<GroupSequence>> {
    let packed: Vec<Array3<f64>> = batch.iter().map(GroupSequence::pack).collect();
    let fps = batch
        .get(anchor)
        .ok_or_else(|| Error::InvalidArgument(format!("anchor {anchor} out of range")))?
        .fps();
    construct_negative_arrays(&packed, anchor, replace_prob, k, rng)?
        .iter()
        .map(|a| GroupSequence::unpack(a, fps))
        .collect()
}
