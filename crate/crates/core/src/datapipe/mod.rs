//! Depth image I/O, degradation, pseudo ground truth and synthetic data.

mod batches;
mod depth;
mod detections;
mod pgm;
mod synth;

pub use batches::{make_batches, BatchPlan};
pub use depth::{degrade, normalize, DegradeError, DEFAULT_D_MAX, SR_UPSCALE};
pub use detections::{
    detection_lines, filter_detections, parse_detection_lines, AnnotationError, AnnotationSet,
    DetectionBox, DetectionRecord, FilterParams, ImageAnnotation, RecordError,
};
pub use pgm::{decode_pgm16, encode_pgm16, load_pgm16, save_pgm16, DepthImage, PgmError};
pub use synth::{synth_detections, synth_scene, PersonSpec, SceneSpec};

use crate::codec::{render_gt, GtMaps, JointTopology, RenderParams, Skeleton};
use crate::tensor::Tensor;

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Low-resolution input in [0, 255].
    pub lr: Tensor<f32>,
    /// SR target in [0, 255].
    pub hr: Tensor<f32>,
    /// Targets on the feature grid.
    pub gt: GtMaps,
    /// Ground truth in the full-resolution frame.
    pub skeletons: Vec<Skeleton>,
    pub factor: usize,
}

impl Sample {
    pub fn from_depth(
        id: impl Into<String>,
        img: &DepthImage,
        skeletons: Vec<Skeleton>,
        factor: usize,
        topo: &JointTopology,
        d_max: f32,
    ) -> Result<Self, DegradeError> {
        let (lr, hr) = degrade(&normalize(img, d_max), factor)?;
        let grid = (lr.shape()[1], lr.shape()[2]);
        let inv = 1.0 / factor as f32;
        let on_grid: Vec<Skeleton> = skeletons.iter().map(|s| s.scaled(inv, inv)).collect();
        let (gt, clamped) = render_gt(&on_grid, topo, grid, RenderParams::for_scale(factor as f32));
        if clamped > 0 {
            log::warn!("{clamped} keypoints clamped into the frame while rendering targets");
        }
        Ok(Self {
            id: id.into(),
            lr,
            hr,
            gt,
            skeletons,
            factor,
        })
    }
}

/// `n` synthetic scenes with 1..=`max_persons` figures each; scene `i` uses
/// seed `seed + i`.
pub fn synth_dataset(n: usize, seed: u64, max_persons: usize, factor: usize, topo: &JointTopology) -> Vec<Sample> {
    (0..n as u64)
        .map(|i| {
            let spec = SceneSpec::random_up_to(seed.wrapping_add(i), max_persons);
            let (img, skels) = synth_scene(&spec);
            Sample::from_depth(format!("scene_{:05}", seed.wrapping_add(i)), &img, skels, factor, topo, DEFAULT_D_MAX)
                .expect("synthetic scenes are 640x480")
        })
        .collect()
}
