//! One-step training: scene sampling, matting loss, AdamW with warmup and decay.

mod loss;
mod optim;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::{make_scene_seeded, scene_seed, PromptMix, SceneConfig, SceneRecord};
use crate::error::{arg_err, Error, Result};
use crate::model::{forward, ModelConfig, Sample};
use crate::params::ParamStore;
use crate::prompt::{OpacityLabel, VisualPrompt};
use crate::tensor::Tensor;

pub use loss::matting_loss;
pub use optim::{lr_schedule, AdamConfig, AdamW};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub optimizer: AdamConfig,
    pub warmup_steps: usize,
    /// Per-step multiplicative decay after warmup.
    pub decay_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub prompt_mix: PromptMix,
    /// Applies to scenes generated on the fly; stored datasets keep their own.
    pub duplicate_prob: f64,
    pub grad_loss_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            optimizer: AdamConfig::default(),
            warmup_steps: 200,
            decay_rate: 0.9995,
            epochs: 1,
            batch_size: 4,
            prompt_mix: PromptMix::default(),
            duplicate_prob: 0.5,
            grad_loss_weight: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(arg_err!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(arg_err!("decay rate must lie in (0, 1], got {}", self.decay_rate));
        }
        if self.batch_size == 0 {
            return Err(arg_err!("batch size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.duplicate_prob) {
            return Err(arg_err!("duplicate probability must lie in [0, 1], got {}", self.duplicate_prob));
        }
        if !(self.grad_loss_weight >= 0.0) {
            return Err(arg_err!("gradient loss weight must be non-negative, got {}", self.grad_loss_weight));
        }
        self.optimizer.validate()?;
        self.prompt_mix.validate()
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        lr_schedule(step, self.lr, self.warmup_steps, self.decay_rate)
    }

    pub fn steps_per_epoch(&self, scenes: usize) -> usize {
        scenes.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, scenes: usize) -> usize {
        self.epochs * self.steps_per_epoch(scenes)
    }
}

/// A training example: image, target matte and the prompt that selects it.
#[derive(Clone, Debug)]
pub struct TrainSample {
    /// `[3, H, W]`
    pub image: Tensor<f32>,
    /// `[H, W]`
    pub alpha: Tensor<f32>,
    pub prompt: VisualPrompt,
    pub opacity: OpacityLabel,
}

/// Where training scenes come from.
#[derive(Clone, Debug)]
pub enum SceneSource {
    /// `count` scenes generated on demand; scene `i` is seeded with `scene_seed(seed, i)`.
    Synthetic { seed: u64, count: usize, scene: SceneConfig },
    /// Scenes loaded from a dataset directory; prompt kinds are redrawn from the mix.
    Stored(Vec<SceneRecord>),
}

impl SceneSource {
    pub fn len(&self) -> usize {
        match self {
            SceneSource::Synthetic { count, .. } => *count,
            SceneSource::Stored(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(&self, index: usize, draw_seed: u64, cfg: &TrainConfig) -> Result<TrainSample> {
        match self {
            SceneSource::Synthetic { seed, scene, .. } => {
                let scene_cfg = SceneConfig { duplicate_prob: cfg.duplicate_prob, prompt_mix: cfg.prompt_mix.clone(), ..scene.clone() };
                let s = make_scene_seeded(scene_seed(*seed, index as u64), &scene_cfg)?;
                Ok(TrainSample { image: s.image.cast(), alpha: s.gt_alpha.cast(), prompt: s.prompt, opacity: s.opacity })
            }
            SceneSource::Stored(records) => {
                let r = &records[index];
                let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
                let kind = cfg.prompt_mix.sample(&mut rng);
                let prompt = match r.prompt_for(kind, draw_seed) {
                    Ok(p) => p,
                    Err(Error::Generation(_)) => r.prompt.prompt.clone(),
                    Err(e) => return Err(e),
                };
                Ok(TrainSample { image: r.image.clone(), alpha: r.alpha.clone(), prompt, opacity: r.prompt.opacity })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    if records.is_empty() {
        w.write_record(["step", "lr", "loss"]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

/// Mean of the first and of the last `window` losses.
pub fn loss_endpoints(records: &[LossRecord], window: usize) -> Option<(f64, f64)> {
    let w = window.min(records.len());
    if w == 0 {
        return None;
    }
    let mean = |s: &[LossRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len() as f64;
    Some((mean(&records[..w]), mean(&records[records.len() - w..])))
}

/// Result of a training run. On divergence `params` hold the last finite state.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub params: ParamStore,
    pub losses: Vec<LossRecord>,
    pub diverged: Option<String>,
}

impl TrainRun {
    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        write_loss_csv(path, &self.losses)
    }
}

fn to_samples(batch: &[TrainSample]) -> Vec<Sample> {
    batch.iter().map(|s| Sample { image: s.image.clone(), prompt: s.prompt.clone(), opacity: s.opacity }).collect()
}

/// Loss and parameter gradients of one batch.
pub fn loss_and_grads(
    params: &ParamStore,
    model: &ModelConfig,
    batch: &[TrainSample],
    grad_weight: f64,
) -> Result<(f64, BTreeMap<String, Tensor<f32>>)> {
    let prepared = model.prepare(&to_samples(batch))?;
    let (h, w) = (prepared.height(), prepared.width());
    let target: Vec<f32> = batch.iter().flat_map(|s| s.alpha.data().iter().copied()).collect();
    let target = Tensor::new([batch.len(), 1, h, w], target)?;
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let out = forward(&mut g, &b, model, &prepared)?;
    let t = g.constant(target);
    let loss = matting_loss(&mut g, out.alpha, t, grad_weight)?;
    let value = g.value(loss).item()? as f64;
    g.backward(loss)?;
    let grads = b.iter().filter_map(|(name, &v)| g.grad(v).map(|gr| (name.clone(), gr))).collect();
    Ok((value, grads))
}

/// Runs `cfg.epochs` passes over `source`, starting from `init`.
pub fn train_loop(init: &ParamStore, model: &ModelConfig, cfg: &TrainConfig, source: &SceneSource) -> Result<TrainRun> {
    model.validate()?;
    cfg.validate()?;
    let mut params = init.clone();
    let mut opt = AdamW::new(cfg.optimizer.clone())?;
    let mut losses = Vec::new();
    let n = source.len();
    let per_epoch = cfg.steps_per_epoch(n);
    let total = cfg.total_steps(n);
    let draw_base = scene_seed(cfg.seed, u64::MAX);
    let mut order: Vec<usize> = Vec::new();
    for step in 0..total {
        let (epoch, within) = (step / per_epoch, step % per_epoch);
        if within == 0 {
            order = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(scene_seed(cfg.seed, epoch as u64)));
        }
        let picks = &order[within * cfg.batch_size..((within + 1) * cfg.batch_size).min(n)];
        let batch: Vec<TrainSample> = picks
            .par_iter()
            .enumerate()
            .map(|(i, &idx)| source.sample(idx, scene_seed(draw_base, (step * cfg.batch_size + i) as u64), cfg))
            .collect::<Result<_>>()?;
        let lr = cfg.lr_at(step);
        let outcome = loss_and_grads(&params, model, &batch, cfg.grad_loss_weight)
            .and_then(|(loss, grads)| {
                if !loss.is_finite() {
                    return Err(Error::Training(format!("loss is {loss}")));
                }
                opt.step(&mut params, &grads, lr).map(|_| loss)
            });
        match outcome {
            Ok(loss) => {
                losses.push(LossRecord { step, lr, loss });
                if (step + 1) % 100 == 0 || step + 1 == total {
                    log::info!("step {}/{total} lr {lr:.3e} loss {loss:.5}", step + 1);
                }
            }
            Err(e @ (Error::Training(_) | Error::NonFinite(_))) => {
                let msg = format!("training diverged at step {step}: {e}");
                log::error!("{msg}");
                return Ok(TrainRun { params, losses, diverged: Some(msg) });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainRun { params, losses, diverged: None })
}
