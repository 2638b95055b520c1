//! SGD training with step decay, per-iteration logging and checkpoints.

mod checkpoint;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datapipe::{make_batches, BatchPlan, Sample};
use crate::model::{LossBreakdown, LossWeights, Model, ModelConfig, ModelError};
use crate::tensor::{sgd_step, Tape, TensorError};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, sidecar_path, Checkpoint, CheckpointError, MAGIC, VERSION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub total_iters: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub factor: usize,
    pub loss_weights: LossWeights,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            momentum: 0.9,
            decay_factor: 0.1,
            decay_every: 12_000,
            total_iters: 32_000,
            batch_size: 12,
            seed: 0,
            eval_every: 1000,
            checkpoint_every: 1000,
            factor: 10,
            loss_weights: LossWeights::default(),
            model: ModelConfig::desk(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iter} (image {image}); first non-finite tensor: {tensor}")]
    NonFinite { iter: u64, image: String, tensor: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("log write failed: {0}")]
    Io(#[from] std::io::Error),
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor must be in (0, 1]");
        }
        if self.decay_every == 0 || self.total_iters == 0 || self.batch_size == 0 {
            return bad("decay_every, total_iters and batch_size must be positive");
        }
        if self.decay_every > self.total_iters {
            return bad("decay_every exceeds total_iters");
        }
        if self.factor != 8 && self.factor != 10 {
            return bad("factor must be 8 or 10");
        }
        self.model.validate()?;
        Ok(())
    }
}

/// `lr0 * decay_factor^floor(iter / decay_every)`. The power is applied as a
/// division by `(1 / decay_factor)^k`, which keeps decimal schedules exact
/// (0.001 / 10 is exactly the double nearest 0.0001).
pub fn lr_at(iter: u64, cfg: &TrainConfig) -> f64 {
    let k = (iter / cfg.decay_every) as i32;
    if k == 0 {
        cfg.lr0
    } else {
        cfg.lr0 / (1.0 / cfg.decay_factor).powi(k)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub iter: u64,
    pub l_hr: f32,
    pub l_b: Vec<f32>,
    pub l_c: Vec<f32>,
    pub l_p: f32,
    pub total: f32,
    pub lr: f64,
}

impl LogEntry {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log entries serialize")
    }
}

/// Training state over a borrowed dataset.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a [Sample],
    plan: BatchPlan,
    model: Model,
    iter: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a [Sample]) -> Result<Self, TrainError> {
        cfg.validate()?;
        let model = Model::build(&cfg.model, cfg.seed)?;
        Self::with_model(cfg, data, model, 0)
    }

    /// Continues from a checkpoint; the checkpoint's seed overrides `cfg.seed`.
    pub fn resume(mut cfg: TrainConfig, data: &'a [Sample], ckpt: &Checkpoint) -> Result<Self, TrainError> {
        cfg.seed = ckpt.seed;
        cfg.validate()?;
        let mut model = Model::build(&cfg.model, cfg.seed)?;
        ckpt.restore_into(&mut model)?;
        Self::with_model(cfg, data, model, ckpt.iteration)
    }

    fn with_model(cfg: TrainConfig, data: &'a [Sample], model: Model, iter: u64) -> Result<Self, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let plan = make_batches(data.len(), cfg.batch_size, cfg.seed);
        Ok(Self {
            cfg,
            data,
            plan,
            model,
            iter,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iter
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, self.iter, self.cfg.seed, Some(self.cfg.clone()))
    }

    /// Loss of one sample without touching the parameters.
    pub fn evaluate(&self, sample: &Sample) -> Result<LossBreakdown, TrainError> {
        let mut tape = Tape::new();
        let fwd = self.model.forward_tape(&mut tape, &sample.lr)?;
        let lv = self
            .model
            .compute_loss(&mut tape, &fwd, &sample.gt, &sample.hr, self.cfg.loss_weights)?;
        Ok(lv.breakdown(&tape))
    }

    /// One SGD iteration on the next batch. The batch gradient is the mean of
    /// per-image gradients, reduced in batch order.
    pub fn step(&mut self) -> Result<LogEntry, TrainError> {
        let batch = self.plan.batch_at(self.iter);
        let inv = 1.0 / batch.len() as f32;
        self.model.params.zero_grads();
        let mut sum: Option<LossBreakdown> = None;
        for &i in &batch {
            let s = &self.data[i];
            let mut tape = Tape::new();
            let fwd = self.model.forward_tape(&mut tape, &s.lr)?;
            let lv = self
                .model
                .compute_loss(&mut tape, &fwd, &s.gt, &s.hr, self.cfg.loss_weights)?;
            let br = lv.breakdown(&tape);
            if !br.total.is_finite() {
                return Err(TrainError::NonFinite {
                    iter: self.iter,
                    image: s.id.clone(),
                    tensor: tape.first_non_finite().unwrap_or_else(|| "total loss".into()),
                });
            }
            let grads = tape.gradients(lv.total)?;
            self.model.params.accumulate(&grads, inv);
            sum = Some(match sum {
                None => br,
                Some(mut acc) => {
                    acc.l_hr += br.l_hr;
                    acc.l_p += br.l_p;
                    acc.total += br.total;
                    acc.l_b.iter_mut().zip(&br.l_b).for_each(|(a, b)| *a += b);
                    acc.l_c.iter_mut().zip(&br.l_c).for_each(|(a, b)| *a += b);
                    acc
                }
            });
        }
        let lr = lr_at(self.iter, &self.cfg);
        sgd_step(&mut self.model.params, lr as f32, self.cfg.momentum as f32);
        let m = sum.expect("batches are nonempty");
        let entry = LogEntry {
            iter: self.iter,
            l_hr: m.l_hr * inv,
            l_b: m.l_b.iter().map(|v| v * inv).collect(),
            l_c: m.l_c.iter().map(|v| v * inv).collect(),
            l_p: m.l_p * inv,
            total: m.total * inv,
            lr,
        };
        self.iter += 1;
        Ok(entry)
    }

    /// Steps until `until` (exclusive, capped at `total_iters`), writing one JSON
    /// log line per iteration and calling `on_iter` after each step.
    pub fn run(
        &mut self,
        until: u64,
        mut log: Option<&mut dyn Write>,
        mut on_iter: impl FnMut(&Self, &LogEntry) -> Result<(), TrainError>,
    ) -> Result<Vec<LogEntry>, TrainError> {
        let until = until.min(self.cfg.total_iters);
        let mut entries = Vec::new();
        while self.iter < until {
            let e = self.step()?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", e.to_json())?;
            }
            on_iter(self, &e)?;
            entries.push(e);
        }
        Ok(entries)
    }
}
