//! Mini-batch training with global-norm gradient clipping. Two update rules:
//! SGD with momentum, and Adam.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::FeatureSequence;
use crate::labels::TrainingTargets;
use crate::losses::{LossBreakdown, LossWeights};
use crate::model::{self, ModelConfig};
use crate::numerics::{stream_seed, Graph, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimMethod {
    Sgd,
    Adam,
}

impl OptimMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimMethod::Sgd => "sgd",
            OptimMethod::Adam => "adam",
        }
    }
}

impl core::str::FromStr for OptimMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimMethod::Sgd),
            "adam" => Ok(OptimMethod::Adam),
            _ => Err(Error::config(format!("unknown optimizer `{s}` (sgd, adam)"))),
        }
    }
}

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub method: OptimMethod,
    pub learning_rate: f64,
    /// SGD momentum, or Adam's first-moment decay.
    pub momentum: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Iterations of linear learning-rate warm-up before the cosine decay.
    pub warmup: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            method: OptimMethod::Adam,
            learning_rate: 0.003,
            momentum: 0.9,
            clip_norm: 1.0,
            iterations: 300,
            batch_size: 2,
            warmup: 20,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.clip_norm >= 0.0) {
            return Err(Error::config(
                "optim: learning rate > 0, momentum in [0, 1), clip norm ≥ 0",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("optim: batch size must be ≥ 1"));
        }
        Ok(())
    }

    /// Step size at `iteration`: linear warm-up, then cosine decay to zero.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        let warm = if self.warmup == 0 {
            1.0
        } else {
            ((iteration + 1) as f64 / self.warmup as f64).min(1.0)
        };
        let progress = iteration as f64 / self.iterations.max(1) as f64;
        let cosine = 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress));
        self.learning_rate * warm * cosine
    }
}

/// One training window with its precomputed targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub visual: FeatureSequence,
    pub audio: FeatureSequence,
    pub targets: TrainingTargets,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogEntry {
    pub iteration: usize,
    pub learning_rate: f64,
    /// Batch mean of each loss component.
    pub loss: LossBreakdown,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

fn describe(b: &LossBreakdown) -> alloc::string::String {
    format!(
        "total={} regression={} classification={} boundary={} centricity={}",
        b.total, b.regression, b.classification, b.boundary, b.centricity
    )
}

/// Forward and backward over one example; gradients are added into `store`.
pub fn accumulate_gradients(
    store: &mut ParamStore,
    cfg: &ModelConfig,
    ex: &Example,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let fwd = model::forward(&mut g, store, cfg, &ex.visual, &ex.audio)?;
    let (loss, breakdown) = model::loss(&mut g, &fwd, &ex.targets, cfg.heads.num_verbs, w)?;
    g.backward(loss, store)?;
    Ok(breakdown)
}

/// Trains `store` in place. Batches are drawn from a per-epoch shuffle keyed by
/// the store's seed, so the log and the final parameters depend only on the
/// inputs.
pub fn train(
    store: &mut ParamStore,
    cfg: &ModelConfig,
    examples: &[Example],
    w: &LossWeights,
    optim: &OptimConfig,
    mut on_step: impl FnMut(&TrainLogEntry),
) -> Result<Vec<TrainLogEntry>> {
    optim.validate()?;
    if examples.is_empty() {
        return Err(Error::contract("no training examples"));
    }
    let mut velocity: Vec<Vec<f64>> = store.iter().map(|(_, t)| alloc::vec![0.0; t.numel()]).collect();
    let mut second = velocity.clone();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut log = Vec::with_capacity(optim.iterations);
    for it in 0..optim.iterations {
        store.zero_grad();
        let mut mean = LossBreakdown::default();
        for _ in 0..optim.batch_size {
            if cursor == order.len() {
                order = (0..examples.len()).collect();
                let key = format!("train.order.{epoch}");
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(store.seed(), &key)));
                cursor = 0;
                epoch += 1;
            }
            let b = accumulate_gradients(store, cfg, &examples[order[cursor]], w)?;
            cursor += 1;
            mean.total += b.total;
            mean.regression += b.regression;
            mean.classification += b.classification;
            mean.boundary += b.boundary;
            mean.centricity += b.centricity;
            mean.excluded_targets += b.excluded_targets;
        }
        let inv = 1.0 / optim.batch_size as f64;
        mean.total *= inv;
        mean.regression *= inv;
        mean.classification *= inv;
        mean.boundary *= inv;
        mean.centricity *= inv;
        if !mean.total.is_finite() {
            return Err(Error::NonFinite {
                iteration: it,
                breakdown: describe(&mean),
            });
        }
        let grad_norm = store.grad_norm() * inv;
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                iteration: it,
                breakdown: format!("{} grad_norm={grad_norm}", describe(&mean)),
            });
        }
        let clip = if optim.clip_norm > 0.0 && grad_norm > optim.clip_norm {
            optim.clip_norm / grad_norm
        } else {
            1.0
        };
        let lr = optim.learning_rate_at(it);
        let b1 = optim.momentum;
        let step = (it + 1) as f64;
        let (bc1, bc2) = (1.0 - libm::pow(b1, step), 1.0 - libm::pow(ADAM_BETA2, step));
        for (((_, t), v), m) in store.iter_mut().zip(velocity.iter_mut()).zip(second.iter_mut()) {
            let Some(grad) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            for (((p, vi), mi), gi) in t.data_mut().iter_mut().zip(v.iter_mut()).zip(m.iter_mut()).zip(&grad) {
                let gi = gi * inv * clip;
                match optim.method {
                    OptimMethod::Sgd => {
                        *vi = b1 * *vi + gi;
                        *p -= lr * *vi;
                    }
                    OptimMethod::Adam => {
                        *vi = b1 * *vi + (1.0 - b1) * gi;
                        *mi = ADAM_BETA2 * *mi + (1.0 - ADAM_BETA2) * gi * gi;
                        *p -= lr * (*vi / bc1) / (libm::sqrt(*mi / bc2) + ADAM_EPS);
                    }
                }
            }
        }
        let entry = TrainLogEntry {
            iteration: it,
            learning_rate: lr,
            loss: mean,
            grad_norm,
        };
        on_step(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Mean of `f` over the last `n` log entries.
pub fn tail_mean(log: &[TrainLogEntry], n: usize, f: impl Fn(&TrainLogEntry) -> f64) -> f64 {
    let tail = &log[log.len().saturating_sub(n)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(f).sum::<f64>() / tail.len() as f64
}
