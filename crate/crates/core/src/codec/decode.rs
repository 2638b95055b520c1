use serde::{Deserialize, Serialize};

use super::{HeatmapSet, JointTopology, Keypoint, PafSet, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeParams {
    pub peak_thresh: f32,
    pub n_samples: usize,
    /// A sample counts as a success when its dot product exceeds this.
    pub sample_thresh: f32,
    pub min_success_ratio: f32,
    pub min_score: f32,
    pub min_parts: usize,
    pub min_person_score: f32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            peak_thresh: 0.1,
            n_samples: 10,
            sample_thresh: 0.05,
            min_success_ratio: 0.8,
            min_score: 0.05,
            min_parts: 3,
            min_person_score: 0.2,
        }
    }
}

/// Heatmap local maximum in continuous map coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub x: f32,
    pub y: f32,
    pub score: f32,
}

/// Offset of the vertex of the parabola through `(-1, l), (0, c), (1, r)`.
fn quadratic_offset(l: f32, c: f32, r: f32) -> f32 {
    let denom = l - 2.0 * c + r;
    if denom < -1e-12 {
        (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Local maxima of a `(h, w)` plane at or above `thresh`, in row-major scan
/// order. A pixel qualifies when it is no smaller than any of its 8 neighbours
/// and strictly larger than the neighbours visited before it, so a flat
/// plateau yields exactly one peak (its first pixel).
pub fn find_peaks(plane: &[f32], (h, w): (usize, usize), thresh: f32) -> Vec<Peak> {
    assert_eq!(plane.len(), h * w, "plane size");
    let at = |i: usize, j: usize| plane[i * w + j];
    let mut peaks = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let v = at(i, j);
            if !(v >= thresh) {
                continue;
            }
            let mut is_peak = true;
            'nb: for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    if ni < 0 || nj < 0 || ni >= h as isize || nj >= w as isize {
                        continue;
                    }
                    let n = at(ni as usize, nj as usize);
                    let earlier = di < 0 || (di == 0 && dj < 0);
                    if n > v || (earlier && n == v) {
                        is_peak = false;
                        break 'nb;
                    }
                }
            }
            if !is_peak {
                continue;
            }
            let dx = if j > 0 && j + 1 < w {
                quadratic_offset(at(i, j - 1), v, at(i, j + 1))
            } else {
                0.0
            };
            let dy = if i > 0 && i + 1 < h {
                quadratic_offset(at(i - 1, j), v, at(i + 1, j))
            } else {
                0.0
            };
            peaks.push(Peak {
                x: j as f32 + 0.5 + dx,
                y: i as f32 + 0.5 + dy,
                score: v.clamp(0.0, 1.0),
            });
        }
    }
    peaks
}

/// Bilinear sample at continuous coordinates with edge clamping.
fn bilinear(plane: &[f32], (h, w): (usize, usize), x: f32, y: f32) -> f32 {
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f32);
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f32);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
    let p = |i: usize, j: usize| plane[i * w + j];
    let top = p(y0, x0) * (1.0 - tx) + p(y0, x1) * tx;
    let bot = p(y1, x0) * (1.0 - tx) + p(y1, x1) * tx;
    top * (1.0 - ty) + bot * ty
}

/// Line integral of limb `limb`'s field along `p1 -> p2`, approximated by
/// `n_samples` equispaced samples including both endpoints. Returns the mean
/// dot product with the unit direction and the fraction of samples whose dot
/// product exceeds `sample_thresh`.
pub fn connection_score(
    paf: &PafSet,
    limb: usize,
    p1: (f32, f32),
    p2: (f32, f32),
    n_samples: usize,
    sample_thresh: f32,
) -> (f32, f32) {
    assert!(n_samples >= 2, "need at least two samples");
    let (dx, dy) = (p2.0 - p1.0, p2.1 - p1.1);
    let len = (dx * dx + dy * dy).sqrt();
    if len < 1e-6 {
        return (0.0, 0.0);
    }
    let (ux, uy) = (dx / len, dy / len);
    let size = paf.size();
    let (fx, fy) = (paf.0.channel(2 * limb), paf.0.channel(2 * limb + 1));
    let mut sum = 0.0f64;
    let mut hits = 0usize;
    for s in 0..n_samples {
        let t = s as f32 / (n_samples - 1) as f32;
        let (x, y) = (p1.0 + t * dx, p1.1 + t * dy);
        let d = bilinear(fx, size, x, y) * ux + bilinear(fy, size, x, y) * uy;
        sum += d as f64;
        if d > sample_thresh {
            hits += 1;
        }
    }
    (
        (sum / n_samples as f64) as f32,
        hits as f32 / n_samples as f32,
    )
}

/// A scored pairing of peak `a` of a limb's parent joint with peak `b` of its child.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub a: usize,
    pub b: usize,
    pub score: f32,
}

/// All endpoint pairs of `limb` that pass the score and success-ratio gates.
pub fn limb_candidates(
    paf: &PafSet,
    limb: usize,
    from: &[Peak],
    to: &[Peak],
    params: &DecodeParams,
) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (a, pa) in from.iter().enumerate() {
        for (b, pb) in to.iter().enumerate() {
            let (score, ratio) = connection_score(
                paf,
                limb,
                (pa.x, pa.y),
                (pb.x, pb.y),
                params.n_samples,
                params.sample_thresh,
            );
            if ratio >= params.min_success_ratio && score >= params.min_score {
                out.push(Candidate { a, b, score });
            }
        }
    }
    out
}

/// Greedy one-to-one selection: highest score first, ties broken by lower
/// `a` then lower `b`; a pair is accepted when neither endpoint is taken.
pub fn greedy_match(candidates: &[Candidate]) -> Vec<Candidate> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    let mut used_a = Vec::new();
    let mut used_b = Vec::new();
    let mut out = Vec::new();
    for c in sorted {
        if !used_a.contains(&c.a) && !used_b.contains(&c.b) {
            used_a.push(c.a);
            used_b.push(c.b);
            out.push(c);
        }
    }
    out
}

struct Person {
    parts: Vec<Option<usize>>,
    links: Vec<f32>,
}

impl Person {
    fn disjoint(&self, other: &Person) -> bool {
        self.parts
            .iter()
            .zip(&other.parts)
            .all(|(x, y)| x.is_none() || y.is_none())
    }
}

/// Groups per-limb greedy matches into persons. Connections that share a
/// peak join the same person; two partial persons joined by a connection are
/// merged when they have no joint in common.
pub fn assemble_skeletons(
    peaks: &[Vec<Peak>],
    paf: &PafSet,
    topo: &JointTopology,
    params: &DecodeParams,
) -> Vec<Skeleton> {
    let nj = topo.num_joints();
    assert_eq!(peaks.len(), nj, "one peak list per joint");
    let mut persons: Vec<Person> = Vec::new();
    for (l, &(ja, jb)) in topo.limbs.iter().enumerate() {
        let cands = limb_candidates(paf, l, &peaks[ja], &peaks[jb], params);
        for c in greedy_match(&cands) {
            let found: Vec<usize> = persons
                .iter()
                .enumerate()
                .filter(|(_, p)| p.parts[ja] == Some(c.a) || p.parts[jb] == Some(c.b))
                .map(|(i, _)| i)
                .collect();
            match found[..] {
                [] => {
                    let mut parts = vec![None; nj];
                    parts[ja] = Some(c.a);
                    parts[jb] = Some(c.b);
                    persons.push(Person {
                        parts,
                        links: vec![c.score],
                    });
                }
                [i] => {
                    let p = &mut persons[i];
                    if p.parts[ja] == Some(c.a) && p.parts[jb].is_none() {
                        p.parts[jb] = Some(c.b);
                        p.links.push(c.score);
                    } else if p.parts[jb] == Some(c.b) && p.parts[ja].is_none() {
                        p.parts[ja] = Some(c.a);
                        p.links.push(c.score);
                    }
                }
                [i, k] => {
                    if persons[i].disjoint(&persons[k]) {
                        let other = persons.remove(k);
                        let p = &mut persons[i];
                        for (dst, src) in p.parts.iter_mut().zip(other.parts) {
                            if src.is_some() {
                                *dst = src;
                            }
                        }
                        p.links.extend(other.links);
                        p.links.push(c.score);
                    }
                }
                _ => unreachable!("a peak belongs to at most one person"),
            }
        }
    }
    persons
        .into_iter()
        .filter_map(|p| {
            let keypoints: Vec<Keypoint> = p
                .parts
                .iter()
                .enumerate()
                .filter_map(|(j, idx)| {
                    idx.map(|i| {
                        let pk = peaks[j][i];
                        Keypoint {
                            joint: j,
                            x: pk.x,
                            y: pk.y,
                            score: pk.score,
                            present: true,
                        }
                    })
                })
                .collect();
            let n = keypoints.len() + p.links.len();
            let total: f32 = keypoints.iter().map(|k| k.score).sum::<f32>() + p.links.iter().sum::<f32>();
            let person_score = total / n as f32;
            (keypoints.len() >= params.min_parts && person_score >= params.min_person_score).then_some(
                Skeleton {
                    keypoints,
                    person_score,
                },
            )
        })
        .collect()
}

/// Peaks on every heatmap channel followed by skeleton assembly.
pub fn decode(
    heatmaps: &HeatmapSet,
    pafs: &PafSet,
    topo: &JointTopology,
    params: &DecodeParams,
) -> Vec<Skeleton> {
    let size = heatmaps.size();
    let peaks: Vec<Vec<Peak>> = (0..heatmaps.joints())
        .map(|j| find_peaks(heatmaps.0.channel(j), size, params.peak_thresh))
        .collect();
    assemble_skeletons(&peaks, pafs, topo, params)
}
