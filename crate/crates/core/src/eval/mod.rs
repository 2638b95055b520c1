//! Flip-test inference, prediction matching and PCK.

use serde::{Deserialize, Serialize};

use crate::codec::{decode, flip_average, CodecError, DecodeParams, HeatmapSet, JointTopology, PafSet, Skeleton};
use crate::datapipe::Sample;
use crate::model::{Model, ModelError};
use crate::tensor::flip_horizontal;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no ground truth")]
    NoGroundTruth,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Final-stage maps for one image; with `flip`, averaged with the un-flipped
/// maps of the mirrored image.
pub fn infer_maps(model: &Model, lr_img: &crate::tensor::Tensor<f32>, flip: bool) -> Result<(HeatmapSet, PafSet), EvalError> {
    let (hm, paf) = model.forward(lr_img)?.stages.last_maps();
    if !flip {
        return Ok((hm, paf));
    }
    let (fh, fp) = model.forward(&flip_horizontal(lr_img))?.stages.last_maps();
    Ok(flip_average((&hm, &paf), (&fh, &fp), &model.config().topology)?)
}

pub fn infer_flip(model: &Model, lr_img: &crate::tensor::Tensor<f32>) -> Result<(HeatmapSet, PafSet), EvalError> {
    infer_maps(model, lr_img, true)
}

/// Decoded skeletons in the full-resolution frame (`factor` times the grid).
pub fn predict(
    model: &Model,
    lr_img: &crate::tensor::Tensor<f32>,
    factor: usize,
    flip: bool,
    params: &DecodeParams,
) -> Result<Vec<Skeleton>, EvalError> {
    let (hm, paf) = infer_maps(model, lr_img, flip)?;
    let f = factor as f32;
    Ok(decode(&hm, &paf, &model.config().topology, params)
        .iter()
        .map(|s| s.scaled(f, f))
        .collect())
}

/// Mean distance over joints present in both, or `None` if they share none.
pub fn pose_distance(a: &Skeleton, b: &Skeleton) -> Option<f32> {
    let mut sum = 0.0;
    let mut n = 0;
    for k in a.present() {
        if let Some(o) = b.get(k.joint) {
            sum += ((k.x - o.x).powi(2) + (k.y - o.y).powi(2)).sqrt();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f32)
}

/// Greedy one-to-one assignment by increasing mean joint distance. Entry `g`
/// of the result is the prediction matched to ground truth `g`.
pub fn match_poses(preds: &[Skeleton], gts: &[Skeleton]) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f32, usize, usize)> = Vec::new();
    for (g, gt) in gts.iter().enumerate() {
        for (p, pr) in preds.iter().enumerate() {
            if let Some(d) = pose_distance(pr, gt) {
                pairs.push((d, g, p));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; gts.len()];
    let mut used = vec![false; preds.len()];
    for (_, g, p) in pairs {
        if out[g].is_none() && !used[p] {
            out[g] = Some(p);
            used[p] = true;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub name: String,
    pub correct: usize,
    pub total: usize,
    /// `100 * correct / total`; `None` when the group has no ground truth.
    pub percentage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckReport {
    pub alpha: f32,
    pub groups: Vec<GroupScore>,
    /// Unweighted mean of the defined group percentages.
    pub average: f64,
}

/// Accumulates PCK counts over images.
#[derive(Debug, Clone)]
pub struct PckAccumulator {
    alpha: f32,
    topo: JointTopology,
    correct: Vec<usize>,
    total: Vec<usize>,
}

impl PckAccumulator {
    pub fn new(alpha: f32, topo: &JointTopology) -> Self {
        let n = topo.report_groups.len();
        Self {
            alpha,
            topo: topo.clone(),
            correct: vec![0; n],
            total: vec![0; n],
        }
    }

    fn group_of(&self, joint: usize) -> Option<usize> {
        self.topo.report_groups.iter().position(|g| g.joints.contains(&joint))
    }

    /// Adds one image. Unmatched ground truths count all their joints as wrong.
    pub fn add_image(&mut self, preds: &[Skeleton], gts: &[Skeleton]) {
        let matches = match_poses(preds, gts);
        for (gt, m) in gts.iter().zip(matches) {
            let Some((x0, y0, x1, y1)) = gt.bbox() else { continue };
            let thresh = self.alpha * (x1 - x0).max(y1 - y0);
            for k in gt.present() {
                let Some(g) = self.group_of(k.joint) else { continue };
                self.total[g] += 1;
                let hit = m
                    .and_then(|p| preds[p].get(k.joint))
                    .is_some_and(|pk| ((pk.x - k.x).powi(2) + (pk.y - k.y).powi(2)).sqrt() <= thresh);
                if hit {
                    self.correct[g] += 1;
                }
            }
        }
    }

    pub fn report(&self) -> Result<PckReport, EvalError> {
        if self.total.iter().all(|&t| t == 0) {
            return Err(EvalError::NoGroundTruth);
        }
        let groups: Vec<GroupScore> = self
            .topo
            .report_groups
            .iter()
            .enumerate()
            .map(|(i, g)| GroupScore {
                name: g.name.clone(),
                correct: self.correct[i],
                total: self.total[i],
                percentage: (self.total[i] > 0).then(|| 100.0 * self.correct[i] as f64 / self.total[i] as f64),
            })
            .collect();
        let defined: Vec<f64> = groups.iter().filter_map(|g| g.percentage).collect();
        let average = defined.iter().sum::<f64>() / defined.len() as f64;
        Ok(PckReport {
            alpha: self.alpha,
            groups,
            average,
        })
    }
}

/// PCK of one image's predictions.
pub fn pck(preds: &[Skeleton], gts: &[Skeleton], alpha: f32, topo: &JointTopology) -> Result<PckReport, EvalError> {
    if gts.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    let mut acc = PckAccumulator::new(alpha, topo);
    acc.add_image(preds, gts);
    acc.report()
}

impl PckReport {
    pub fn group(&self, name: &str) -> Option<&GroupScore> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Aligned table with one header row and one result row.
    pub fn to_table(&self, label: &str) -> String {
        let width = label.len().max(5);
        let mut head = format!("{:<width$}", "Model");
        let mut row = format!("{label:<width$}");
        for g in &self.groups {
            let w = g.name.len().max(6);
            head.push_str(&format!(" | {:>w$}", g.name));
            let v = g.percentage.map_or("-".to_string(), |p| format!("{p:.1}"));
            row.push_str(&format!(" | {v:>w$}"));
        }
        head.push_str(&format!(" | {:>7}", "Average"));
        row.push_str(&format!(" | {:>7.1}", self.average));
        format!("{head}\n{row}\n")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// PCK of a model over samples whose ground truth is in the full-resolution frame.
pub fn evaluate_model(
    model: &Model,
    samples: &[Sample],
    flip: bool,
    alpha: f32,
    params: &DecodeParams,
) -> Result<PckReport, EvalError> {
    let mut acc = PckAccumulator::new(alpha, &model.config().topology);
    for s in samples {
        let preds = predict(model, &s.lr, s.factor, flip, params)?;
        acc.add_image(&preds, &s.skeletons);
    }
    acc.report()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::joint;
    use crate::model::ModelConfig;
    use crate::tensor::Tensor;

    fn person(dx: f32) -> Skeleton {
        let pts: Vec<(usize, f32, f32)> = (0..10).map(|j| (j, dx + 10.0 * (j % 3) as f32, 10.0 * j as f32)).collect();
        // bbox 20 x 90
        Skeleton::from_points(&pts)
    }

    #[test]
    fn identity_and_spurious_matches() {
        let gts = vec![person(0.0), person(200.0)];
        assert_eq!(match_poses(&gts, &gts), vec![Some(0), Some(1)]);
        let mut preds = gts.clone();
        preds.insert(0, person(500.0));
        assert_eq!(match_poses(&preds, &gts), vec![Some(1), Some(2)]);
    }

    #[test]
    fn perfect_predictions_score_100() {
        let topo = JointTopology::upper_body();
        let gts = vec![person(0.0), person(300.0)];
        let r = pck(&gts, &gts, 0.2, &topo).unwrap();
        assert!(r.groups.iter().all(|g| g.percentage == Some(100.0)));
        assert_eq!(r.average, 100.0);
        assert!(matches!(pck(&gts, &[], 0.2, &topo), Err(EvalError::NoGroundTruth)));
    }

    fn square_person() -> Skeleton {
        // max bbox side 100
        let mut pts: Vec<(usize, f32, f32)> = (0..10).map(|j| (j, 50.0, 10.0 * j as f32)).collect();
        pts[joint::L_HIP] = (joint::L_HIP, 0.0, 100.0);
        pts[joint::R_HIP] = (joint::R_HIP, 100.0, 100.0);
        pts[joint::HEAD] = (joint::HEAD, 50.0, 0.0);
        Skeleton::from_points(&pts)
    }

    fn moved(s: &Skeleton, j: usize, dx: f32) -> Skeleton {
        let mut s = s.clone();
        s.keypoints.iter_mut().filter(|k| k.joint == j).for_each(|k| k.x += dx);
        s
    }

    #[test]
    fn threshold_is_alpha_times_max_side() {
        let topo = JointTopology::upper_body();
        let gt = square_person();
        let near = pck(&[moved(&gt, joint::L_WRIST, 19.0)], &[gt.clone()], 0.2, &topo).unwrap();
        assert_eq!(near.group("Wrist").unwrap().percentage, Some(100.0));
        let far = pck(&[moved(&gt, joint::L_WRIST, 21.0)], &[gt.clone()], 0.2, &topo).unwrap();
        assert_eq!(far.group("Wrist").unwrap().percentage, Some(50.0));
        let head = pck(&[moved(&gt, joint::HEAD, 50.0)], &[gt], 0.2, &topo).unwrap();
        assert_eq!(head.group("Head").unwrap().percentage, Some(50.0));
        assert_eq!(head.average, (50.0 + 400.0) / 5.0);
    }

    #[test]
    fn unmatched_ground_truth_counts_as_wrong() {
        let topo = JointTopology::upper_body();
        let gts = vec![person(0.0), person(300.0)];
        let r = pck(&gts[..1], &gts, 0.2, &topo).unwrap();
        assert!(r.groups.iter().all(|g| g.percentage == Some(50.0)));
    }

    #[test]
    fn report_formats() {
        let topo = JointTopology::upper_body();
        let r = pck(&[person(0.0)], &[person(0.0)], 0.2, &topo).unwrap();
        let table = r.to_table("DepthPose_64x48");
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].len(), lines[1].len());
        assert!(lines[0].contains("Shoulder") && lines[0].ends_with("Average"));
        let back: PckReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn symmetric_model_flip_is_noop() {
        let cfg = ModelConfig::desk();
        let mut m = Model::build(&cfg, 21).unwrap();
        m.symmetrize();
        // left-right symmetric image
        let x = Tensor::from_fn(&[1, 12, 16], |i| {
            let (r, c) = (i / 16, i % 16);
            let c = c.min(15 - c);
            ((r * 31 + c * 17) % 97) as f32 * 2.0
        });
        let (h1, p1) = infer_maps(&m, &x, false).unwrap();
        let (h2, p2) = infer_flip(&m, &x).unwrap();
        assert_eq!(h1.0.shape(), h2.0.shape());
        assert!(h1.0.max_abs_diff(&h2.0) < 1e-5);
        assert!(p1.0.max_abs_diff(&p2.0) < 1e-5);
    }
}
