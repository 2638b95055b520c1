use serde::{Deserialize, Serialize};

use super::{GtMaps, HeatmapSet, JointTopology, PafSet, Skeleton};
use crate::tensor::Tensor;

/// Rendering widths, in map pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    pub sigma: f32,
    pub limb_width: f32,
}

impl RenderParams {
    /// Gaussian width of 7 image pixels expressed on a map `scale` times
    /// smaller than the image; limbs one map pixel wide.
    pub fn for_scale(scale: f32) -> Self {
        Self {
            sigma: 7.0 / scale,
            limb_width: 1.0,
        }
    }
}

fn clamp_point(x: f32, y: f32, h: usize, w: usize, clamped: &mut usize) -> (f32, f32) {
    let cx = x.clamp(0.0, w as f32);
    let cy = y.clamp(0.0, h as f32);
    if cx != x || cy != y {
        *clamped += 1;
    }
    (cx, cy)
}

/// Per-joint Gaussian peaks, combined across persons by pixelwise maximum.
/// Returns the maps and the number of keypoints clamped into the frame.
pub fn render_heatmaps(
    skels: &[Skeleton],
    topo: &JointTopology,
    (h, w): (usize, usize),
    sigma: f32,
) -> (HeatmapSet, usize) {
    assert!(sigma > 0.0, "sigma must be positive");
    let j = topo.num_joints();
    let mut maps = Tensor::<f32>::zeros(&[j, h, w]);
    let mut clamped = 0;
    let inv = 1.0 / (2.0 * (sigma as f64).powi(2));
    for s in skels {
        for k in s.present().filter(|k| k.joint < j) {
            let (kx, ky) = clamp_point(k.x, k.y, h, w, &mut clamped);
            let plane = maps.channel_mut(k.joint);
            for i in 0..h {
                let dy = i as f64 + 0.5 - ky as f64;
                for jx in 0..w {
                    let dx = jx as f64 + 0.5 - kx as f64;
                    let v = (-(dx * dx + dy * dy) * inv).exp() as f32;
                    let p = &mut plane[i * w + jx];
                    if v > *p {
                        *p = v;
                    }
                }
            }
        }
    }
    (HeatmapSet(maps), clamped)
}

/// Unit parent-to-child vectors on pixels within `limb_width` of each limb
/// segment; overlapping limbs of the same type are averaged.
pub fn render_pafs(
    skels: &[Skeleton],
    topo: &JointTopology,
    (h, w): (usize, usize),
    limb_width: f32,
) -> PafSet {
    assert!(limb_width > 0.0, "limb width must be positive");
    let mut maps = Tensor::<f32>::zeros(&[topo.paf_channels(), h, w]);
    let mut count = vec![0u32; h * w];
    let mut dummy = 0;
    for (l, &(a, b)) in topo.limbs.iter().enumerate() {
        count.iter_mut().for_each(|c| *c = 0);
        let mut sum_x = vec![0.0f64; h * w];
        let mut sum_y = vec![0.0f64; h * w];
        for s in skels {
            let (Some(pa), Some(pb)) = (s.get(a), s.get(b)) else { continue };
            let (ax, ay) = clamp_point(pa.x, pa.y, h, w, &mut dummy);
            let (bx, by) = clamp_point(pb.x, pb.y, h, w, &mut dummy);
            let (dx, dy) = ((bx - ax) as f64, (by - ay) as f64);
            let len = (dx * dx + dy * dy).sqrt();
            if len < 1e-6 {
                continue;
            }
            let (ux, uy) = (dx / len, dy / len);
            let lw = limb_width as f64;
            let x0 = ((ax.min(bx) as f64 - lw).floor().max(0.0)) as usize;
            let x1 = ((ax.max(bx) as f64 + lw).ceil() as usize).min(w);
            let y0 = ((ay.min(by) as f64 - lw).floor().max(0.0)) as usize;
            let y1 = ((ay.max(by) as f64 + lw).ceil() as usize).min(h);
            for i in y0..y1 {
                for j in x0..x1 {
                    let px = j as f64 + 0.5 - ax as f64;
                    let py = i as f64 + 0.5 - ay as f64;
                    let along = px * ux + py * uy;
                    let perp = (px * uy - py * ux).abs();
                    if along >= 0.0 && along <= len && perp <= lw {
                        sum_x[i * w + j] += ux;
                        sum_y[i * w + j] += uy;
                        count[i * w + j] += 1;
                    }
                }
            }
        }
        let (cx, cy) = (2 * l, 2 * l + 1);
        for p in 0..h * w {
            if count[p] > 0 {
                let n = count[p] as f64;
                maps.channel_mut(cx)[p] = (sum_x[p] / n) as f32;
                maps.channel_mut(cy)[p] = (sum_y[p] / n) as f32;
            }
        }
    }
    PafSet(maps)
}

/// Heatmaps and part affinity fields for one image, with the clamp count.
pub fn render_gt(
    skels: &[Skeleton],
    topo: &JointTopology,
    size: (usize, usize),
    params: RenderParams,
) -> (GtMaps, usize) {
    let (c_star, clamped) = render_heatmaps(skels, topo, size, params.sigma);
    let b_star = render_pafs(skels, topo, size, params.limb_width);
    (GtMaps { c_star, b_star }, clamped)
}
