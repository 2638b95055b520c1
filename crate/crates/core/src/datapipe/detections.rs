//! Pseudo ground truth from color-image detections.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{JointTopology, Keypoint, Skeleton};

/// One detected person: box score, `[x, y, w, h]` and `[joint, x, y, score]` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionBox {
    pub score: f32,
    pub bbox: [f32; 4],
    pub keypoints: Vec<(usize, f32, f32, f32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub image_id: String,
    pub boxes: Vec<DetectionBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    /// Boxes scoring at least this are kept.
    pub box_thresh: f32,
    /// Keypoints scoring strictly more than this count and are kept.
    pub kp_thresh: f32,
    pub min_kp: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            box_thresh: 0.7,
            kp_thresh: 0.35,
            min_kp: 4,
        }
    }
}

/// A record that could not be used, with its 1-based line number when read
/// from text.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordError {
    pub line: Option<usize>,
    pub image_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageAnnotation {
    /// `(width, height)` of the frame the coordinates refer to.
    pub size: (usize, usize),
    pub skeletons: Vec<Skeleton>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub topology: JointTopology,
    pub images: BTreeMap<String, ImageAnnotation>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireImage {
    size: [usize; 2],
    skeletons: Vec<Vec<(usize, f32, f32, f32)>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireSet {
    topology: JointTopology,
    images: BTreeMap<String, WireImage>,
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("annotation JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid topology: {0}")]
    Topology(#[from] crate::codec::TopologyError),
    #[error("image {image}: {msg}")]
    Invalid { image: String, msg: String },
}

fn skeleton_rows(s: &Skeleton) -> Vec<(usize, f32, f32, f32)> {
    s.present().map(|k| (k.joint, k.x, k.y, k.score)).collect()
}

fn skeleton_from_rows(rows: &[(usize, f32, f32, f32)], person_score: f32) -> Skeleton {
    Skeleton {
        keypoints: rows
            .iter()
            .map(|&(joint, x, y, score)| Keypoint {
                joint,
                x,
                y,
                score,
                present: true,
            })
            .collect(),
        person_score,
    }
}

impl AnnotationSet {
    pub fn new(topology: JointTopology) -> Self {
        Self {
            topology,
            images: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let wire = WireSet {
            topology: self.topology.clone(),
            images: self
                .images
                .iter()
                .map(|(id, im)| {
                    (
                        id.clone(),
                        WireImage {
                            size: [im.size.0, im.size.1],
                            skeletons: im.skeletons.iter().map(skeleton_rows).collect(),
                        },
                    )
                })
                .collect(),
        };
        serde_json::to_string_pretty(&wire).expect("annotations serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, AnnotationError> {
        let wire: WireSet = serde_json::from_str(text)?;
        wire.topology.validate()?;
        let nj = wire.topology.num_joints();
        let mut images = BTreeMap::new();
        for (id, im) in wire.images {
            let invalid = |msg: String| AnnotationError::Invalid {
                image: id.clone(),
                msg,
            };
            let mut skeletons = Vec::new();
            for rows in &im.skeletons {
                let mut seen = vec![false; nj];
                for &(j, ..) in rows {
                    if j >= nj {
                        return Err(invalid(format!("joint id {j} out of range")));
                    }
                    if std::mem::replace(&mut seen[j], true) {
                        return Err(invalid(format!("joint {j} appears twice in one skeleton")));
                    }
                }
                skeletons.push(skeleton_from_rows(rows, 1.0));
            }
            images.insert(
                id.clone(),
                ImageAnnotation {
                    size: (im.size[0], im.size[1]),
                    skeletons,
                },
            );
        }
        Ok(Self {
            topology: wire.topology,
            images,
        })
    }

    /// Detection records reproducing these annotations: the person score
    /// becomes the box score and the box is the keypoint bounding box.
    pub fn to_records(&self) -> Vec<DetectionRecord> {
        self.images
            .iter()
            .map(|(id, im)| DetectionRecord {
                image_id: id.clone(),
                boxes: im
                    .skeletons
                    .iter()
                    .map(|s| {
                        let (x0, y0, x1, y1) = s.bbox().unwrap_or_default();
                        DetectionBox {
                            score: s.person_score,
                            bbox: [x0, y0, (x1 - x0).max(1.0), (y1 - y0).max(1.0)],
                            keypoints: skeleton_rows(s),
                        }
                    })
                    .collect(),
            })
            .collect()
    }
}

fn check_record(rec: &DetectionRecord, num_joints: usize) -> Result<(), String> {
    for (b, bx) in rec.boxes.iter().enumerate() {
        if !(0.0..=1.0).contains(&bx.score) {
            return Err(format!("box {b}: score {} outside [0, 1]", bx.score));
        }
        if !(bx.bbox[2] > 0.0 && bx.bbox[3] > 0.0) {
            return Err(format!("box {b}: non-positive size {}x{}", bx.bbox[2], bx.bbox[3]));
        }
        let mut seen = vec![false; num_joints];
        for &(j, x, y, s) in &bx.keypoints {
            if j >= num_joints {
                return Err(format!("box {b}: joint id {j} out of range"));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(format!("box {b}: joint {j} listed twice"));
            }
            if !(0.0..=1.0).contains(&s) {
                return Err(format!("box {b}: keypoint score {s} outside [0, 1]"));
            }
            if !(x.is_finite() && y.is_finite()) {
                return Err(format!("box {b}: non-finite keypoint coordinates"));
            }
        }
    }
    Ok(())
}

/// Keeps confident boxes with enough confident keypoints. Invalid records
/// are reported and skipped; images with no surviving person are still
/// listed, with an empty skeleton list.
pub fn filter_detections(
    recs: &[DetectionRecord],
    params: &FilterParams,
    topology: &JointTopology,
    frame: (usize, usize),
) -> (AnnotationSet, Vec<RecordError>) {
    let mut out = AnnotationSet::new(topology.clone());
    let mut errors = Vec::new();
    for rec in recs {
        if let Err(message) = check_record(rec, topology.num_joints()) {
            errors.push(RecordError {
                line: None,
                image_id: Some(rec.image_id.clone()),
                message,
            });
            continue;
        }
        let entry = out.images.entry(rec.image_id.clone()).or_insert(ImageAnnotation {
            size: frame,
            skeletons: Vec::new(),
        });
        for bx in rec.boxes.iter().filter(|b| b.score >= params.box_thresh) {
            let kept: Vec<_> = bx
                .keypoints
                .iter()
                .copied()
                .filter(|&(.., s)| s > params.kp_thresh)
                .collect();
            if kept.len() >= params.min_kp {
                entry.skeletons.push(skeleton_from_rows(&kept, bx.score));
            }
        }
    }
    (out, errors)
}

/// Parses JSON-lines detections; blank lines are ignored and malformed lines
/// are reported with their line number.
pub fn parse_detection_lines(text: &str) -> (Vec<DetectionRecord>, Vec<RecordError>) {
    let mut recs = Vec::new();
    let mut errors = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DetectionRecord>(line) {
            Ok(r) => recs.push(r),
            Err(e) => errors.push(RecordError {
                line: Some(n + 1),
                image_id: None,
                message: e.to_string(),
            }),
        }
    }
    (recs, errors)
}

pub fn detection_lines(recs: &[DetectionRecord]) -> String {
    let mut s = String::new();
    for r in recs {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    s
}
