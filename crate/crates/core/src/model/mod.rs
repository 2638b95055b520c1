//! The joint super-resolution and pose network.
//!
//! Layout for an `H x W` depth input and `sr_stages = 3`:
//!
//! ```text
//! x ─ SR stage 1 ─ shuffle ─┬─ SR stage 2 ─ shuffle ─┬─ SR stage 3 ─ shuffle ─┬─ head ─ sr_img (8H x 8W)
//!                           │                         │                        │
//!                      avgpool 2 = S1            avgpool 4 = S2       feature extraction (3 max-pools) = F
//!
//! stage 1: concat(F, S1, S2)            ─┬─ PAF branch     ─ B_1
//!                                        └─ heatmap branch ─ C_1
//! stage t: concat(F, S1, S2, B_t-1, C_t-1) ── same two branches ── B_t, C_t
//! ```
//!
//! F, S1, S2 and all B_t, C_t live on the `H x W` feature grid.

mod config;
mod symmetry;

use serde::Serialize;

use crate::codec::{GtMaps, HeatmapSet, PafSet};
use crate::tensor::{
    bicubic_resize, orthogonal_conv_weight, ParamId, ParamStore, Real, Tape, Tensor, TensorError, Var,
};

pub use config::{ConvSpec, ModelConfig, Profile};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input must be (1, H, W) with H, W > 0, got {0:?}")]
    Input(Vec<usize>),
    #[error("{what} is {found:?}, expected {expected:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Conv {
    w: ParamId,
    b: ParamId,
    pad: usize,
    relu: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct Stage {
    paf: Vec<Conv>,
    heat: Vec<Conv>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real = f32> {
    cfg: ModelConfig,
    pub params: ParamStore<T>,
    sr: Vec<Vec<Conv>>,
    sr_head: Option<Conv>,
    feat: Vec<(Conv, bool)>,
    stages: Vec<Stage>,
}

/// Tape handles of the SR block outputs.
#[derive(Debug, Clone, Copy)]
pub struct SrVars {
    pub s1: Option<Var>,
    pub s2: Option<Var>,
    pub sr_feat: Var,
    pub sr_img: Var,
}

/// Tape handles of one full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub f: Var,
    pub s1: Option<Var>,
    pub s2: Option<Var>,
    pub sr_img: Option<Var>,
    /// `(B_t, C_t)` per stage.
    pub stages: Vec<(Var, Var)>,
}

/// Forward results copied off the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle<T: Real = f32> {
    pub f: Tensor<T>,
    pub s1: Option<Tensor<T>>,
    pub s2: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutputs<T: Real = f32> {
    pub b: Vec<Tensor<T>>,
    pub c: Vec<Tensor<T>>,
}

impl StageOutputs<f32> {
    /// Final-stage predictions as codec maps.
    pub fn last_maps(&self) -> (HeatmapSet, PafSet) {
        (
            HeatmapSet(self.c.last().expect("at least one stage").clone()),
            PafSet(self.b.last().expect("at least one stage").clone()),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T: Real = f32> {
    pub features: FeatureBundle<T>,
    pub stages: StageOutputs<T>,
    /// In the network's scaled intensity domain; `None` without the SR block.
    pub sr_img: Option<Tensor<T>>,
}

/// Per-term losses exactly as evaluated on the tape.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown<T: Real + Serialize = f32> {
    pub l_hr: T,
    pub l_b: Vec<T>,
    pub l_c: Vec<T>,
    pub l_p: T,
    pub total: T,
}

impl<T: Real + Serialize> LossBreakdown<T> {
    /// `l_p = Σ_t (l_b[t] + l_c[t])` and `total = w_hr·l_hr + w_p·l_p`, evaluated
    /// in the same order and precision as on the tape.
    pub fn identities_hold(&self, weights: LossWeights) -> bool {
        let mut l_p = None;
        for (b, c) in self.l_b.iter().zip(&self.l_c) {
            let s = *b + *c;
            l_p = Some(match l_p {
                None => s,
                Some(acc) => acc + s,
            });
        }
        let hr = weighted(self.l_hr, weights.hr);
        let p = weighted(self.l_p, weights.pose);
        self.l_b.len() == self.l_c.len() && l_p == Some(self.l_p) && self.total == hr + p
    }
}

fn weighted<T: Real>(v: T, w: f32) -> T {
    if w == 1.0 {
        v
    } else {
        v * T::cst(w as f64)
    }
}

/// Relative weights of the HR and pose terms in the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub hr: f32,
    pub pose: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { hr: 1.0, pose: 1.0 }
    }
}

/// Tape handles of the loss terms.
#[derive(Debug, Clone)]
pub struct LossVars {
    pub l_hr: Var,
    pub l_b: Vec<Var>,
    pub l_c: Vec<Var>,
    pub l_p: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown<T: Real + Serialize>(&self, tape: &Tape<T>) -> LossBreakdown<T> {
        let v = |x: Var| tape.value(x).item();
        LossBreakdown {
            l_hr: v(self.l_hr),
            l_b: self.l_b.iter().map(|&x| v(x)).collect(),
            l_c: self.l_c.iter().map(|&x| v(x)).collect(),
            l_p: v(self.l_p),
            total: v(self.total),
        }
    }
}

struct Builder<'a, T: Real> {
    params: &'a mut ParamStore<T>,
    seed: u64,
    count: u64,
}

impl<T: Real> Builder<'_, T> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, relu: bool) -> Result<Conv, ModelError> {
        let layer_seed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.count.wrapping_mul(0xD1B5_4A32_D192_ED03));
        self.count += 1;
        let gain = if relu { RELU_GAIN } else { 1.0 };
        let w = self
            .params
            .add(format!("{name}.w"), orthogonal_conv_weight(cout, cin, k, gain, layer_seed))?;
        let b = self.params.add(format!("{name}.b"), Tensor::zeros(&[cout]))?;
        Ok(Conv { w, b, pad: k / 2, relu })
    }

    fn branch(&mut self, name: &str, cin: usize, hidden: &[ConvSpec], out: usize) -> Result<Vec<Conv>, ModelError> {
        let mut layers = Vec::new();
        let mut c = cin;
        for (i, spec) in hidden.iter().enumerate() {
            layers.push(self.conv(&format!("{name}.{i}"), c, spec.out, spec.kernel, true)?);
            c = spec.out;
        }
        layers.push(self.conv(&format!("{name}.out"), c, out, 1, false)?);
        Ok(layers)
    }
}

impl Model<f32> {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder {
            params: &mut params,
            seed,
            count: 0,
        };
        let mut sr = Vec::new();
        let mut sr_head = None;
        let mut c = 1;
        if cfg.use_sr {
            for (s, stage) in cfg.sr_channels.iter().enumerate() {
                let mut layers = Vec::new();
                for (i, spec) in stage.iter().enumerate() {
                    layers.push(b.conv(&format!("sr.{s}.{i}"), c, spec.out, spec.kernel, true)?);
                    c = spec.out;
                }
                c /= 4;
                sr.push(layers);
            }
            sr_head = Some(b.conv("sr.head", c, 1, cfg.sr_head_kernel, false)?);
        }
        let mut feat = Vec::new();
        for (i, spec) in cfg.feature_layers.iter().enumerate() {
            feat.push((b.conv(&format!("feat.{i}"), c, spec.out, spec.kernel, true)?, spec.pool));
            c = spec.out;
        }
        let (t1, t2) = cfg.tap_channels();
        let base = cfg.feature_channels() + t1 + t2;
        let (np, nj) = (cfg.topology.paf_channels(), cfg.topology.num_joints());
        let mut stages = Vec::new();
        for t in 0..cfg.pose_stages {
            let (cin, hidden) = if t == 0 {
                (base, &cfg.stage1_branch)
            } else {
                (base + np + nj, &cfg.refine_branch)
            };
            stages.push(Stage {
                paf: b.branch(&format!("pose.{}.paf", t + 1), cin, hidden, np)?,
                heat: b.branch(&format!("pose.{}.heat", t + 1), cin, hidden, nj)?,
            });
        }
        Ok(Self {
            cfg: cfg.clone(),
            params,
            sr,
            sr_head,
            feat,
            stages,
        })
    }
}

impl<T: Real> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            sr: self.sr.clone(),
            sr_head: self.sr_head,
            feat: self.feat.clone(),
            stages: self.stages.clone(),
        }
    }

    fn apply(&self, tape: &mut Tape<T>, x: Var, conv: &Conv) -> Result<Var, ModelError> {
        let w = tape.param(&self.params, conv.w);
        let b = tape.param(&self.params, conv.b);
        let y = tape.conv2d(x, w, b, conv.pad)?;
        Ok(if conv.relu { tape.relu(y) } else { y })
    }

    fn check_input(x: &Tensor<T>) -> Result<(usize, usize), ModelError> {
        match x.shape() {
            &[1, h, w] if h > 0 && w > 0 => Ok((h, w)),
            s => Err(ModelError::Input(s.to_vec())),
        }
    }

    /// SR block on an already normalized `(1, H, W)` input node.
    pub fn sr_forward(&self, tape: &mut Tape<T>, x: Var) -> Result<SrVars, ModelError> {
        if !self.cfg.use_sr {
            return Err(ModelError::Config("model was built without the SR block".into()));
        }
        Self::check_input(tape.value(x))?;
        let (mut s1, mut s2) = (None, None);
        let mut h = x;
        for (s, stage) in self.sr.iter().enumerate() {
            for conv in stage {
                h = self.apply(tape, h, conv)?;
            }
            h = tape.pixel_shuffle(h, 2)?;
            match s {
                0 => s1 = Some(tape.avgpool(h, 2)?),
                1 => s2 = Some(tape.avgpool(h, 4)?),
                _ => {}
            }
        }
        let head = self.sr_head.as_ref().expect("SR model has a head");
        let sr_img = self.apply(tape, h, head)?;
        tape.label(sr_img, "sr_img");
        Ok(SrVars {
            s1,
            s2,
            sr_feat: h,
            sr_img,
        })
    }

    /// Pose block: `(B_t, C_t)` for every stage.
    pub fn pose_forward(
        &self,
        tape: &mut Tape<T>,
        f: Var,
        s1: Option<Var>,
        s2: Option<Var>,
    ) -> Result<Vec<(Var, Var)>, ModelError> {
        let mut base = vec![f];
        base.extend(s1);
        base.extend(s2);
        let fs = tape.value(f).shape()[1..].to_vec();
        for &v in &base[1..] {
            let vs = &tape.value(v).shape()[1..];
            if vs != fs.as_slice() {
                return Err(ModelError::Shape {
                    what: "SR tap size",
                    expected: fs,
                    found: vs.to_vec(),
                });
            }
        }
        let mut outs: Vec<(Var, Var)> = Vec::new();
        for (t, stage) in self.stages.iter().enumerate() {
            let mut inputs = base.clone();
            if let Some(&(b, c)) = outs.last() {
                inputs.push(b);
                inputs.push(c);
            }
            let x = tape.concat(&inputs)?;
            let mut pb = x;
            for conv in &stage.paf {
                pb = self.apply(tape, pb, conv)?;
            }
            let mut pc = x;
            for conv in &stage.heat {
                pc = self.apply(tape, pc, conv)?;
            }
            tape.label(pb, format!("B_{}", t + 1));
            tape.label(pc, format!("C_{}", t + 1));
            outs.push((pb, pc));
        }
        Ok(outs)
    }

    /// Full forward pass of a `(1, H, W)` image in [0, 255].
    pub fn forward_tape(&self, tape: &mut Tape<T>, lr_img: &Tensor<T>) -> Result<ForwardVars, ModelError> {
        let (h, w) = Self::check_input(lr_img)?;
        let (mut feat, s1, s2, sr_img) = if self.cfg.use_sr {
            let x = tape.leaf(self.cfg.normalize_input(lr_img));
            let sr = self.sr_forward(tape, x)?;
            (sr.sr_feat, sr.s1, sr.s2, Some(sr.sr_img))
        } else {
            let up = self.cfg.upscale();
            let x = tape.leaf(self.cfg.normalize_input(&bicubic_resize(lr_img, h * up, w * up)));
            (x, None, None, None)
        };
        for (conv, pool) in &self.feat {
            feat = self.apply(tape, feat, conv)?;
            if *pool {
                feat = tape.maxpool2(feat)?;
            }
        }
        tape.label(feat, "F");
        let stages = self.pose_forward(tape, feat, s1, s2)?;
        Ok(ForwardVars {
            f: feat,
            s1,
            s2,
            sr_img,
            stages,
        })
    }

    pub fn forward(&self, lr_img: &Tensor<T>) -> Result<ForwardOutput<T>, ModelError> {
        let mut tape = Tape::new();
        let v = self.forward_tape(&mut tape, lr_img)?;
        let get = |x: Var| tape.value(x).clone();
        Ok(ForwardOutput {
            features: FeatureBundle {
                f: get(v.f),
                s1: v.s1.map(get),
                s2: v.s2.map(get),
            },
            stages: StageOutputs {
                b: v.stages.iter().map(|&(b, _)| get(b)).collect(),
                c: v.stages.iter().map(|&(_, c)| get(c)).collect(),
            },
            sr_img: v.sr_img.map(get),
        })
    }

    /// Records every loss term. `hr_img` is in [0, 255] at the SR output size;
    /// it is scaled like the input before comparison.
    pub fn compute_loss(
        &self,
        tape: &mut Tape<T>,
        fwd: &ForwardVars,
        gt: &GtMaps,
        hr_img: &Tensor<T>,
        weights: LossWeights,
    ) -> Result<LossVars, ModelError> {
        let l_hr = match fwd.sr_img {
            Some(sr) => {
                let want = tape.value(sr).shape().to_vec();
                if hr_img.shape() != want.as_slice() {
                    return Err(ModelError::Shape {
                        what: "HR target",
                        expected: want,
                        found: hr_img.shape().to_vec(),
                    });
                }
                let target = tape.leaf(self.cfg.normalize_input(hr_img));
                tape.mse(sr, target)?
            }
            None => tape.leaf(Tensor::scalar(T::zero())),
        };
        let b_star = tape.leaf(gt.b_star.0.cast());
        let c_star = tape.leaf(gt.c_star.0.cast());
        let (mut l_b, mut l_c, mut per_stage) = (Vec::new(), Vec::new(), Vec::new());
        for &(b, c) in &fwd.stages {
            for (pred, target, what) in [(b, b_star, "PAF target"), (c, c_star, "heatmap target")] {
                let (ps, ts) = (tape.value(pred).shape(), tape.value(target).shape());
                if ps != ts {
                    return Err(ModelError::Shape {
                        what,
                        expected: ps.to_vec(),
                        found: ts.to_vec(),
                    });
                }
            }
            let lb = tape.mse(b, b_star)?;
            let lc = tape.mse(c, c_star)?;
            per_stage.push(tape.add(lb, lc)?);
            l_b.push(lb);
            l_c.push(lc);
        }
        let l_p = tape.sum_scalars(&per_stage)?;
        let hr_term = if weights.hr == 1.0 {
            l_hr
        } else {
            tape.scale(l_hr, T::cst(weights.hr as f64))
        };
        let p_term = if weights.pose == 1.0 {
            l_p
        } else {
            tape.scale(l_p, T::cst(weights.pose as f64))
        };
        let total = tape.add(hr_term, p_term)?;
        tape.label(total, "total loss");
        Ok(LossVars {
            l_hr,
            l_b,
            l_c,
            l_p,
            total,
        })
    }
}
