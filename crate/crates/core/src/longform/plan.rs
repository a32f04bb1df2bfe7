//! Overlapping window layout for long music.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    /// Half-open `(start, end)` frame ranges; the last may run past the
    /// total length.
    pub windows: Vec<(usize, usize)>,
    pub overlap_frames: usize,
    pub total_frames: usize,
}

impl ChunkPlan {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn window_frames(&self) -> usize {
        self.windows[0].1 - self.windows[0].0
    }

    pub fn hop(&self) -> usize {
        self.window_frames() - self.overlap_frames
    }
}

/// Windows of `window_frames` advancing by half a window until the end of
/// the track is covered.
pub fn chunk_schedule(total_frames: usize, window_frames: usize) -> Result<ChunkPlan> {
    if window_frames < 2 || window_frames % 2 != 0 {
        return Err(Error::InvalidArgument(format!("window of {window_frames} frames must be even and at least 2")));
    }
    if total_frames < window_frames {
        return Err(Error::AudioTooShort {
            frames: total_frames,
            window: window_frames,
        });
    }
    let hop = window_frames / 2;
    let count = (total_frames - window_frames).div_ceil(hop) + 1;
    Ok(ChunkPlan {
        windows: (0..count).map(|c| (c * hop, c * hop + window_frames)).collect(),
        overlap_frames: hop,
        total_frames,
    })
}
