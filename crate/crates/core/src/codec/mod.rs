//! Ground-truth map rendering and skeleton decoding.
//!
//! Coordinates on a map are continuous: pixel `(row i, col j)` covers
//! `[j, j+1) x [i, i+1)` and its centre is `(j + 0.5, i + 0.5)`. Skeletons
//! are rendered and decoded in map coordinates; callers rescale to the image
//! frame with [`Skeleton::scaled`].

mod decode;
mod flip;
mod render;
mod topology;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub use decode::{
    assemble_skeletons, connection_score, decode, find_peaks, greedy_match, limb_candidates,
    Candidate, DecodeParams, Peak,
};
pub use flip::{flip_average, unflip};
pub use render::{render_gt, render_heatmaps, render_pafs, RenderParams};
pub use topology::{joint, JointTopology, ReportGroup, TopologyError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("{what} maps have {found} channels, topology needs {expected}")]
    ChannelMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("map sizes differ: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
}

/// Keypoint confidence maps, one channel per joint: `(J, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSet(pub Tensor<f32>);

/// Part affinity fields, channels `2l` (x) and `2l + 1` (y) per limb: `(2L, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PafSet(pub Tensor<f32>);

impl HeatmapSet {
    pub fn joints(&self) -> usize {
        self.0.shape()[0]
    }
    pub fn size(&self) -> (usize, usize) {
        (self.0.shape()[1], self.0.shape()[2])
    }
}

impl PafSet {
    pub fn limbs(&self) -> usize {
        self.0.shape()[0] / 2
    }
    pub fn size(&self) -> (usize, usize) {
        (self.0.shape()[1], self.0.shape()[2])
    }
}

/// Rendered training targets at the feature-grid resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct GtMaps {
    pub c_star: HeatmapSet,
    pub b_star: PafSet,
}

impl GtMaps {
    pub fn size(&self) -> (usize, usize) {
        self.c_star.size()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub joint: usize,
    pub x: f32,
    pub y: f32,
    pub score: f32,
    pub present: bool,
}

/// One person: at most one keypoint per joint id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Skeleton {
    pub keypoints: Vec<Keypoint>,
    pub person_score: f32,
}

impl Skeleton {
    pub fn from_points(points: &[(usize, f32, f32)]) -> Self {
        Self {
            keypoints: points
                .iter()
                .map(|&(joint, x, y)| Keypoint {
                    joint,
                    x,
                    y,
                    score: 1.0,
                    present: true,
                })
                .collect(),
            person_score: 1.0,
        }
    }

    /// Present keypoint for `joint`, if any.
    pub fn get(&self, joint: usize) -> Option<&Keypoint> {
        self.keypoints.iter().find(|k| k.joint == joint && k.present)
    }

    pub fn present(&self) -> impl Iterator<Item = &Keypoint> {
        self.keypoints.iter().filter(|k| k.present)
    }

    pub fn num_present(&self) -> usize {
        self.present().count()
    }

    /// Same skeleton with coordinates multiplied by `(sx, sy)`.
    pub fn scaled(&self, sx: f32, sy: f32) -> Self {
        let mut s = self.clone();
        for k in &mut s.keypoints {
            k.x *= sx;
            k.y *= sy;
        }
        s
    }

    pub fn translated(&self, dx: f32, dy: f32) -> Self {
        let mut s = self.clone();
        for k in &mut s.keypoints {
            k.x += dx;
            k.y += dy;
        }
        s
    }

    /// `(min_x, min_y, max_x, max_y)` over present keypoints.
    pub fn bbox(&self) -> Option<(f32, f32, f32, f32)> {
        self.present().fold(None, |acc, k| {
            Some(match acc {
                None => (k.x, k.y, k.x, k.y),
                Some((x0, y0, x1, y1)) => (x0.min(k.x), y0.min(k.y), x1.max(k.x), y1.max(k.y)),
            })
        })
    }
}
