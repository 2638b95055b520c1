use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::codec::JointTopology;
use crate::tensor::{Real, Tensor};

/// One convolution: output channels and a square kernel of size 1, 3 or 7
/// (padding 0, 1, 3 respectively, so spatial size is preserved).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out: usize,
    pub kernel: usize,
    /// Follow this layer with a 2x2 max-pool (feature extraction only).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pool: bool,
}

impl ConvSpec {
    pub const fn new(out: usize, kernel: usize) -> Self {
        Self { out, kernel, pool: false }
    }
    pub const fn pooled(out: usize, kernel: usize) -> Self {
        Self { out, kernel, pool: true }
    }
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Small widths that train on one CPU core.
    Desk,
    /// Widths in the range of the original multi-stage pose networks.
    PaperLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub profile: Profile,
    pub sr_stages: usize,
    /// Convolutions of each SR stage; the last one feeds the pixel shuffle.
    pub sr_channels: Vec<Vec<ConvSpec>>,
    pub sr_head_kernel: usize,
    /// Feature extraction on the upscaled maps, with exactly `sr_stages` pools.
    pub feature_layers: Vec<ConvSpec>,
    /// Hidden layers of each branch in stage 1 and in the refinement stages.
    pub stage1_branch: Vec<ConvSpec>,
    pub refine_branch: Vec<ConvSpec>,
    pub pose_stages: usize,
    pub topology: JointTopology,
    /// The [0, 255] input and the HR target enter the network as
    /// `(x - input_mean) * input_scale`.
    pub input_mean: f32,
    pub input_scale: f32,
    /// When false the SR block is replaced by bicubic upsampling of the input
    /// and the pose block sees only F (no S1/S2, no HR loss).
    pub use_sr: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        use ConvSpec as C;
        Self {
            profile: Profile::Desk,
            sr_stages: 3,
            sr_channels: vec![vec![C::new(32, 3)], vec![C::new(16, 3)], vec![C::new(8, 3)]],
            sr_head_kernel: 3,
            feature_layers: vec![
                C::pooled(4, 3),
                C::pooled(8, 3),
                C::pooled(16, 3),
                C::new(16, 3),
            ],
            stage1_branch: vec![C::new(16, 3), C::new(16, 3)],
            refine_branch: vec![C::new(16, 3), C::new(16, 3)],
            pose_stages: 3,
            topology: JointTopology::upper_body(),
            input_mean: 128.0,
            input_scale: 1.0 / 256.0,
            use_sr: true,
        }
    }

    pub fn paper_like() -> Self {
        use ConvSpec as C;
        Self {
            profile: Profile::PaperLike,
            sr_channels: vec![
                vec![C::new(64, 3), C::new(64, 3)],
                vec![C::new(64, 3), C::new(64, 3)],
                vec![C::new(32, 3), C::new(32, 3)],
            ],
            feature_layers: vec![
                C::new(32, 3),
                C::pooled(32, 3),
                C::new(64, 3),
                C::pooled(64, 3),
                C::new(128, 3),
                C::pooled(128, 3),
                C::new(128, 3),
                C::new(128, 3),
            ],
            stage1_branch: vec![C::new(128, 3), C::new(128, 3), C::new(128, 3), C::new(512, 1)],
            refine_branch: vec![
                C::new(128, 7),
                C::new(128, 7),
                C::new(128, 7),
                C::new(128, 7),
                C::new(128, 7),
                C::new(128, 1),
            ],
            ..Self::desk()
        }
    }

    /// Same feature extraction and pose block, without the SR block.
    pub fn baseline(&self) -> Self {
        Self {
            use_sr: false,
            ..self.clone()
        }
    }

    pub fn normalize_input<T: Real>(&self, x: &Tensor<T>) -> Tensor<T> {
        let (mean, scale) = (T::cst(self.input_mean as f64), T::cst(self.input_scale as f64));
        x.map(|v| (v - mean) * scale)
    }

    pub fn upscale(&self) -> usize {
        1 << self.sr_stages
    }

    /// Channels of the S1 and S2 taps.
    pub fn tap_channels(&self) -> (usize, usize) {
        if !self.use_sr {
            return (0, 0);
        }
        let out = |s: usize| self.sr_channels[s].last().map_or(0, |c| c.out / 4);
        (out(0), if self.sr_stages >= 2 { out(1) } else { 0 })
    }

    pub fn feature_channels(&self) -> usize {
        self.feature_layers.last().map_or(0, |c| c.out)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.sr_stages < 1 {
            return bad("sr_stages must be at least 1".into());
        }
        if self.pose_stages < 1 {
            return bad("pose_stages must be at least 1".into());
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return bad("input_scale must be positive".into());
        }
        if !self.input_mean.is_finite() {
            return bad("input_mean must be finite".into());
        }
        self.topology
            .validate()
            .map_err(|e| ModelError::Config(format!("topology: {e}")))?;
        let kernel_ok = |k: usize| matches!(k, 1 | 3 | 7);
        if self.use_sr {
            if self.sr_channels.len() != self.sr_stages {
                return bad(format!(
                    "sr_channels has {} stages, sr_stages is {}",
                    self.sr_channels.len(),
                    self.sr_stages
                ));
            }
            for (s, stage) in self.sr_channels.iter().enumerate() {
                let Some(last) = stage.last() else {
                    return bad(format!("SR stage {s} has no layers"));
                };
                if last.out == 0 || last.out % 4 != 0 {
                    return bad(format!(
                        "SR stage {s} feeds the pixel shuffle with {} channels, not a positive multiple of 4",
                        last.out
                    ));
                }
                if stage.iter().any(|c| c.pool) {
                    return bad(format!("SR stage {s} may not pool"));
                }
            }
            if !kernel_ok(self.sr_head_kernel) {
                return bad(format!("SR head kernel {} not in {{1, 3, 7}}", self.sr_head_kernel));
            }
        }
        let pools = self.feature_layers.iter().filter(|c| c.pool).count();
        if pools != self.sr_stages {
            return bad(format!(
                "feature extraction pools {pools} times but must undo {} upscaling stages",
                self.sr_stages
            ));
        }
        let all = self
            .sr_channels
            .iter()
            .flatten()
            .chain(&self.feature_layers)
            .chain(&self.stage1_branch)
            .chain(&self.refine_branch);
        for c in all {
            if !kernel_ok(c.kernel) {
                return bad(format!("kernel size {} not in {{1, 3, 7}}", c.kernel));
            }
            if c.out == 0 {
                return bad("layer with zero output channels".into());
            }
        }
        if (self.stage1_branch.iter().chain(&self.refine_branch)).any(|c| c.pool) {
            return bad("pose branches may not pool".into());
        }
        Ok(())
    }
}
