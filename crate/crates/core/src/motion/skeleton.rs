use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::NUM_JOINTS;
use crate::error::{Error, Result};

const SMPL_SKELETON_JSON: &str = include_str!("../../data/smpl_skeleton.json");

/// Kinematic tree with rest-pose bone offsets in meters (y-up, floor at y = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    #[serde(default)]
    pub joint_names: Vec<String>,
    pub parent_index: Vec<i32>,
    pub rest_offsets: Vec<[f64; 3]>,
    pub left_foot_index: usize,
    pub right_foot_index: usize,
}

impl Skeleton {
    /// The 24-joint SMPL-convention tree shipped with the crate.
    pub fn smpl() -> &'static Skeleton {
        static SMPL: OnceLock<Skeleton> = OnceLock::new();
        SMPL.get_or_init(|| {
            let sk: Skeleton =
                serde_json::from_str(SMPL_SKELETON_JSON).expect("bundled skeleton parses");
            sk.validate().expect("bundled skeleton is a valid tree");
            sk
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.parent_index.len() != NUM_JOINTS || self.rest_offsets.len() != NUM_JOINTS {
            return Err(Error::BadShape(format!(
                "skeleton must have {NUM_JOINTS} joints, got {} parents / {} offsets",
                self.parent_index.len(),
                self.rest_offsets.len()
            )));
        }
        let roots: Vec<usize> = (0..NUM_JOINTS)
            .filter(|&j| self.parent_index[j] < 0)
            .collect();
        if roots != [0] {
            return Err(Error::BadShape(format!(
                "skeleton needs exactly one root at index 0, found {roots:?}"
            )));
        }
        // Parents precede children, which rules out cycles and lets FK run in index order.
        for j in 1..NUM_JOINTS {
            let p = self.parent_index[j];
            if p < 0 || p as usize >= j {
                return Err(Error::BadShape(format!(
                    "joint {j} has parent {p}; parents must precede children"
                )));
            }
        }
        if self.rest_offsets[0] != [0.0; 3] {
            return Err(Error::BadShape("root rest offset must be zero".into()));
        }
        for idx in [self.left_foot_index, self.right_foot_index] {
            if idx >= NUM_JOINTS {
                return Err(Error::BadShape(format!("foot index {idx} out of range")));
            }
        }
        Ok(())
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        let p = self.parent_index[joint];
        (p >= 0).then_some(p as usize)
    }

    /// Root height that places the lowest rest-pose joint on the floor.
    pub fn standing_root_height(&self) -> f64 {
        let mut heights = vec![0.0; NUM_JOINTS];
        for j in 1..NUM_JOINTS {
            let p = self.parent_index[j] as usize;
            heights[j] = heights[p] + self.rest_offsets[j][1];
        }
        -heights.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}
