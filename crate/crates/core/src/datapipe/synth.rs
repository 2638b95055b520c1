//! Stick-figure depth scenes with exact joint locations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DepthImage, DetectionBox, DetectionRecord};
use crate::codec::{joint, Skeleton};

/// Focal length in pixels for a 640-pixel-wide frame.
const FOCAL: f32 = 525.0;
/// Depth at which a figure is drawn at unit scale.
const REF_DEPTH: f32 = 2500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonSpec {
    /// Neck position at full resolution.
    pub neck: (f32, f32),
    pub depth_mm: f32,
    pub head_tilt: f32,
    /// Upper-arm and forearm angles from straight down, positive away from
    /// the body; `[left, right]`.
    pub upper_arm: [f32; 2],
    pub forearm: [f32; 2],
}

impl PersonSpec {
    pub fn scale(&self) -> f32 {
        REF_DEPTH / self.depth_mm
    }

    /// Joint locations. The figure faces the camera, so its left side is at
    /// larger x.
    pub fn skeleton(&self) -> Skeleton {
        let s = self.scale();
        let (nx, ny) = self.neck;
        let mut pts = vec![(0, 0.0, 0.0); 10];
        pts[joint::NECK] = (joint::NECK, nx, ny);
        pts[joint::HEAD] = (joint::HEAD, nx + 45.0 * s * self.head_tilt.sin(), ny - 45.0 * s * self.head_tilt.cos());
        for (side, sign) in [(0usize, 1.0f32), (1, -1.0)] {
            let (sh, el, wr, hip) = if side == 0 {
                (joint::L_SHOULDER, joint::L_ELBOW, joint::L_WRIST, joint::L_HIP)
            } else {
                (joint::R_SHOULDER, joint::R_ELBOW, joint::R_WRIST, joint::R_HIP)
            };
            let sp = (nx + sign * 28.0 * s, ny + 6.0 * s);
            let (ua, fa) = (self.upper_arm[side], self.forearm[side]);
            let ep = (sp.0 + sign * 45.0 * s * ua.sin(), sp.1 + 45.0 * s * ua.cos());
            let wp = (ep.0 + sign * 40.0 * s * fa.sin(), ep.1 + 40.0 * s * fa.cos());
            pts[sh] = (sh, sp.0, sp.1);
            pts[el] = (el, ep.0, ep.1);
            pts[wr] = (wr, wp.0, wp.1);
            pts[hip] = (hip, nx + sign * 18.0 * s, ny + 120.0 * s);
        }
        Skeleton::from_points(&pts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub size: (usize, usize),
    pub background_mm: f32,
    /// Background depth change per image row (mm); positive means the top
    /// of the frame is farther away.
    pub background_tilt: f32,
    pub noise_mm: f32,
    pub persons: Vec<PersonSpec>,
}

fn bbox_of(s: &Skeleton, pad: f32) -> (f32, f32, f32, f32) {
    let (x0, y0, x1, y1) = s.bbox().expect("figure has joints");
    (x0 - pad, y0 - pad, x1 + pad, y1 + pad)
}

impl SceneSpec {
    /// Random scene with `persons` figures in separate horizontal slots at
    /// 640x480. Figures are resampled until their padded boxes are disjoint.
    pub fn random(seed: u64, persons: usize) -> Self {
        let (w, h) = (640.0f32, 480.0f32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slot = w / persons.max(1) as f32;
        let mut figures: Vec<PersonSpec> = Vec::new();
        for p in 0..persons {
            for attempt in 0.. {
                let depth_mm = rng.random_range(2500.0..3500.0);
                let cand = PersonSpec {
                    neck: (
                        slot * (p as f32 + 0.5) + rng.random_range(-8.0..8.0),
                        rng.random_range(150.0..210.0),
                    ),
                    depth_mm,
                    head_tilt: rng.random_range(-0.2..0.2),
                    upper_arm: [rng.random_range(0.1..0.7), rng.random_range(0.1..0.7)],
                    forearm: [rng.random_range(-0.2..1.0), rng.random_range(-0.2..1.0)],
                };
                let bb = bbox_of(&cand.skeleton(), 14.0);
                let inside = bb.0 >= 0.0 && bb.2 <= w && bb.1 >= 0.0 && bb.3 <= h;
                let apart = figures.iter().all(|o| {
                    let ob = bbox_of(&o.skeleton(), 14.0);
                    bb.2 < ob.0 || ob.2 < bb.0
                });
                if (inside && apart) || attempt == 1000 {
                    figures.push(cand);
                    break;
                }
            }
        }
        Self {
            seed,
            size: (640, 480),
            background_mm: rng.random_range(4000.0..5000.0),
            background_tilt: rng.random_range(0.0..2.0),
            noise_mm: 3.0,
            persons: figures,
        }
    }

    /// Like [`SceneSpec::random`] with a person count drawn from `1..=max_persons`.
    pub fn random_up_to(seed: u64, max_persons: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_C0DE);
        Self::random(seed, rng.random_range(1..=max_persons.max(1)))
    }
}

/// Distance from `p` to the segment `a-b`.
fn seg_dist(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Capsules drawn for one figure: `(a, b, radius)` in pixels.
fn capsules(p: &PersonSpec) -> Vec<((f32, f32), (f32, f32), f32)> {
    let s = p.scale();
    let sk = p.skeleton();
    let at = |j: usize| {
        let k = sk.get(j).expect("all joints present");
        (k.x, k.y)
    };
    let mid = |a: (f32, f32), b: (f32, f32)| ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
    let hips = mid(at(joint::L_HIP), at(joint::R_HIP));
    vec![
        (at(joint::HEAD), at(joint::HEAD), 16.0 * s),
        (at(joint::NECK), at(joint::HEAD), 7.0 * s),
        (at(joint::NECK), hips, 24.0 * s),
        (at(joint::L_SHOULDER), at(joint::R_SHOULDER), 10.0 * s),
        (at(joint::L_HIP), at(joint::R_HIP), 14.0 * s),
        (at(joint::L_SHOULDER), at(joint::L_ELBOW), 8.0 * s),
        (at(joint::R_SHOULDER), at(joint::R_ELBOW), 8.0 * s),
        (at(joint::L_ELBOW), at(joint::L_WRIST), 7.0 * s),
        (at(joint::R_ELBOW), at(joint::R_WRIST), 7.0 * s),
    ]
}

/// Renders the scene. Skeleton coordinates are in the image frame with
/// pixel `(i, j)` centred at `(j + 0.5, i + 0.5)`.
pub fn synth_scene(spec: &SceneSpec) -> (DepthImage, Vec<Skeleton>) {
    let (w, h) = spec.size;
    let mut z: Vec<f32> = (0..h)
        .flat_map(|i| {
            let d = spec.background_mm + spec.background_tilt * (h as f32 / 2.0 - i as f32);
            std::iter::repeat_n(d, w)
        })
        .collect();
    for p in &spec.persons {
        let mm_per_px = p.depth_mm / FOCAL;
        for (a, b, r) in capsules(p) {
            let x0 = (a.0.min(b.0) - r).floor().max(0.0) as usize;
            let x1 = ((a.0.max(b.0) + r).ceil() as usize).min(w);
            let y0 = (a.1.min(b.1) - r).floor().max(0.0) as usize;
            let y1 = ((a.1.max(b.1) + r).ceil() as usize).min(h);
            for i in y0..y1 {
                for j in x0..x1 {
                    let d = seg_dist((j as f32 + 0.5, i as f32 + 0.5), a, b);
                    if d < r {
                        let depth = p.depth_mm - (r * r - d * d).sqrt() * mm_per_px;
                        let cell = &mut z[i * w + j];
                        if depth < *cell {
                            *cell = depth;
                        }
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0xD3D7));
    let noise = Normal::new(0.0f32, spec.noise_mm.max(0.0)).expect("finite noise");
    let raw = z
        .iter()
        .map(|&d| (d + noise.sample(&mut rng)).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let img = DepthImage::new(w, h, raw).expect("scene size is positive");
    (img, spec.persons.iter().map(PersonSpec::skeleton).collect())
}

/// Noisy detector output for a scene: per-person box and keypoint scores,
/// jittered keypoints, and occasional spurious low-confidence boxes.
pub fn synth_detections(image_id: &str, skels: &[Skeleton], seed: u64) -> DetectionRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0f32, 3.0).expect("finite");
    let mut boxes = Vec::new();
    for s in skels {
        let keypoints: Vec<_> = s
            .present()
            .map(|k| {
                let score = if rng.random_bool(0.15) {
                    rng.random_range(0.0..0.35)
                } else {
                    rng.random_range(0.36..1.0)
                };
                (k.joint, k.x + jitter.sample(&mut rng), k.y + jitter.sample(&mut rng), score)
            })
            .collect();
        let (x0, y0, x1, y1) = s.bbox().unwrap_or_default();
        boxes.push(DetectionBox {
            score: rng.random_range(0.55..1.0),
            bbox: [x0 - 10.0, y0 - 10.0, x1 - x0 + 20.0, y1 - y0 + 20.0],
            keypoints,
        });
    }
    if rng.random_bool(0.3) {
        let (x, y) = (rng.random_range(0.0..560.0), rng.random_range(0.0..400.0));
        boxes.push(DetectionBox {
            score: rng.random_range(0.1..0.69),
            bbox: [x, y, 80.0, 80.0],
            keypoints: (0..10)
                .map(|j| (j, x + rng.random_range(0.0..80.0), y + rng.random_range(0.0..80.0), rng.random_range(0.0..1.0)))
                .collect(),
        });
    }
    DetectionRecord {
        image_id: image_id.to_string(),
        boxes,
    }
}
