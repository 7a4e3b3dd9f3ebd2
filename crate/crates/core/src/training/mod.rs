//! Deterministic training, gradient verification, checkpoints and
//! evaluation.

mod checkpoint;
mod config;
mod evaluate;
mod gradcheck;
mod samples;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, ParamArray, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use evaluate::{evaluate, measure_attention_tv, Evaluation, Forecaster, ModelForecaster};
pub use gradcheck::{finite_difference_check, grad_check};
pub use samples::{build_samples, gap_samples, sample_at};

use crate::error::{Error, Result};
use crate::losses::{total_loss, LossBreakdown};
use crate::model::{sample_gradient, sample_terms, Model, Sample, SmoothMode};
use crate::scenes::{DataSplit, SceneSet, Standardizer};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

/// Mean batch losses of one epoch plus its wall time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub nll: f64,
    pub kl: f64,
    pub smooth: f64,
    pub l0: f64,
    pub total: f64,
    pub wall_s: f64,
}

impl EpochRecord {
    /// Equality of every loss column, ignoring wall time.
    pub fn same_losses(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.nll.to_bits() == other.nll.to_bits()
            && self.kl.to_bits() == other.kl.to_bits()
            && self.smooth.to_bits() == other.smooth.to_bits()
            && self.l0.to_bits() == other.l0.to_bits()
            && self.total.to_bits() == other.total.to_bits()
    }
}

/// Standardized training and validation samples.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub std: Standardizer,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Fits the standardizer on the training scenes and builds every sample.
pub fn prepare(cfg: &TrainConfig, set: &SceneSet, split: &DataSplit) -> Result<Prepared> {
    let std = Standardizer::fit(set, &split.train)?;
    Ok(Prepared {
        train: build_samples(set, &split.train, cfg, &std)?,
        val: build_samples(set, &split.val, cfg, &std)?,
        test: build_samples(set, &split.test, cfg, &std)?,
        std,
    })
}

/// Batch objective `mean_i L0_i + beta * sum_i smooth_i` and its gradient.
///
/// The smooth column of the breakdown is the batch sum, `nll` and `kl` are
/// batch means.
pub fn batch_objective(model: &Model, batch: &[&Sample], cfg: &TrainConfig, mode: SmoothMode) -> Result<(LossBreakdown, Vec<f64>)> {
    let w = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; model.params.len()];
    let (mut nll, mut kl, mut smooth) = (0.0, 0.0, 0.0);
    for s in batch {
        let (t, g) = sample_gradient(model, s, cfg.kl_weight, cfg.beta, w, cfg.dt, mode);
        for (name, v) in [("nll", t.nll), ("kl", t.kl), ("smooth", t.smooth)] {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite {name} for scene {} agent {} frame {}",
                    s.scene, s.agent_id, s.frame
                )));
            }
        }
        nll += w * t.nll;
        kl += w * t.kl;
        smooth += t.smooth;
        for (a, b) in grad.iter_mut().zip(&g.params) {
            *a += b;
        }
    }
    Ok((total_loss(nll, kl, smooth, &cfg.loss())?, grad))
}

fn clip(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Runs `cfg.epochs` epochs of Adam over `samples` in seeded shuffled
/// batches, calling `on_epoch` after each one.
pub fn train_model(
    model: &mut Model,
    samples: &[Sample],
    cfg: &TrainConfig,
    mode: SmoothMode,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::validation("training set has no samples"));
    }
    let mut adam = Adam::new(model.params.len(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut acc = LossBreakdown::default();
        let mut l0_sum = 0.0;
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let (loss, mut grad) = batch_objective(model, &batch, cfg, mode)
                .map_err(|e| Error::Numeric(format!("epoch {epoch} batch {b}: {e}")))?;
            if !loss.total.is_finite() {
                return Err(Error::Numeric(format!("epoch {epoch} batch {b}: non-finite total loss")));
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("epoch {epoch} batch {b}: non-finite gradient")));
            }
            if let Some(c) = cfg.grad_clip {
                clip(&mut grad, c);
            }
            adam.update(model.params.flat_mut(), &grad);
            acc.nll += loss.nll;
            acc.kl += loss.kl;
            acc.smooth += loss.smooth;
            acc.total += loss.total;
            l0_sum += loss.nll + cfg.kl_weight * loss.kl;
        }
        let n = batches.len() as f64;
        let rec = EpochRecord {
            epoch: epoch + 1,
            nll: acc.nll / n,
            kl: acc.kl / n,
            smooth: acc.smooth / n,
            l0: l0_sum / n,
            total: acc.total / n,
            wall_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(history)
}

/// Mean over samples of `L0_i + beta * smooth_i`.
pub fn validation_loss(model: &Model, samples: &[Sample], cfg: &TrainConfig) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let sum: f64 = samples
        .iter()
        .map(|s| {
            let t = sample_terms(model, s, cfg.kl_weight, cfg.dt, SmoothMode::Included);
            if cfg.beta == 0.0 {
                t.l0
            } else {
                t.l0 + cfg.beta * t.smooth
            }
        })
        .sum();
    Some(sum / samples.len() as f64)
}

/// Trains a fresh model on the split's training scenes.
pub fn train(cfg: &TrainConfig, set: &SceneSet, split: &DataSplit) -> Result<Checkpoint> {
    train_with(cfg, set, split, SmoothMode::Included, |_| {})
}

pub fn train_with(
    cfg: &TrainConfig,
    set: &SceneSet,
    split: &DataSplit,
    mode: SmoothMode,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::validation("training split is empty"));
    }
    let data = prepare(cfg, set, split)?;
    let mut model = Model::new(&cfg.model(), cfg.seed)?;
    let history = train_model(&mut model, &data.train, cfg, mode, on_epoch)?;
    let val = validation_loss(&model, &data.val, cfg);
    Ok(Checkpoint::from_model(&model, cfg, data.std, history, val))
}
