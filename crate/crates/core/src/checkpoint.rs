//! Checkpoint directories and the predictors they load into.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{export_attention_map, AttentionMap};
use crate::config::RunConfig;
use crate::data::{list_scenes, load_scene};
use crate::error::{Error, Result};
use crate::model::{predict, Sample};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::{write_loss_csv, LossRecord};

pub const META_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const PARAMS_DIR: &str = "params";
pub const FORMAT: &str = "promptmatte-checkpoint";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Model,
    /// Test fixture that answers every known image with its stored ground truth.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub kind: CheckpointKind,
    pub steps: usize,
    #[serde(default)]
    pub diverged: Option<String>,
    /// Dataset the oracle answers from.
    #[serde(default)]
    pub data: Option<PathBuf>,
    pub param_count: usize,
}

fn write_meta(dir: &Path, meta: &CheckpointMeta, config_text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CONFIG_FILE), config_text)?;
    std::fs::write(dir.join(META_FILE), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Writes parameters, the configuration text as given, the loss curve and metadata.
pub fn save_model(dir: &Path, params: &ParamStore, config_text: &str, losses: &[LossRecord], diverged: Option<String>) -> Result<()> {
    RunConfig::parse(config_text)?;
    params.save_dir(&dir.join(PARAMS_DIR))?;
    write_loss_csv(&dir.join(LOSS_FILE), losses)?;
    let meta = CheckpointMeta {
        format: FORMAT.into(),
        version: 1,
        kind: CheckpointKind::Model,
        steps: losses.len(),
        diverged,
        data: None,
        param_count: params.param_count(),
    };
    write_meta(dir, &meta, config_text)
}

pub fn save_oracle(dir: &Path, data: &Path, config_text: &str) -> Result<()> {
    RunConfig::parse(config_text)?;
    let meta = CheckpointMeta {
        format: FORMAT.into(),
        version: 1,
        kind: CheckpointKind::Oracle,
        steps: 0,
        diverged: None,
        data: Some(data.canonicalize()?),
        param_count: 0,
    };
    write_meta(dir, &meta, config_text)
}

fn image_key(image: &Tensor<f32>) -> u64 {
    let mut h = DefaultHasher::new();
    image.shape().hash(&mut h);
    for v in image.data() {
        ((v.clamp(0.0, 1.0) * 255.0).round() as u8).hash(&mut h);
    }
    h.finish()
}

pub enum Predictor {
    Model(ParamStore),
    Oracle(HashMap<u64, Tensor<f32>>),
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub config: RunConfig,
    pub predictor: Predictor,
}

/// Scenes are predicted in fixed-size chunks so results do not depend on thread count.
pub const PREDICT_CHUNK: usize = 8;

impl Checkpoint {
    pub fn load(dir: &Path) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(META_FILE))?)?;
        if meta.format != FORMAT {
            return Err(Error::Format(format!("{} is not a checkpoint", dir.display())));
        }
        let config = RunConfig::parse(&std::fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        let predictor = match meta.kind {
            CheckpointKind::Model => Predictor::Model(ParamStore::load_dir(&dir.join(PARAMS_DIR))?),
            CheckpointKind::Oracle => {
                let data = meta.data.as_ref().ok_or_else(|| Error::Format("oracle checkpoint names no dataset".into()))?;
                let index = list_scenes(data)?
                    .par_iter()
                    .filter_map(|d| load_scene(d).ok().map(|r| (image_key(&r.image), r.alpha)))
                    .collect();
                Predictor::Oracle(index)
            }
        };
        Ok(Checkpoint { meta, config, predictor })
    }

    /// A model checkpoint held in memory.
    pub fn from_params(params: ParamStore, config: RunConfig) -> Self {
        let meta = CheckpointMeta {
            format: FORMAT.into(),
            version: 1,
            kind: CheckpointKind::Model,
            steps: 0,
            diverged: None,
            data: None,
            param_count: params.param_count(),
        };
        Checkpoint { meta, config, predictor: Predictor::Model(params) }
    }

    /// Alpha `[H, W]` for every sample.
    pub fn predict(&self, samples: &[Sample]) -> Result<Vec<Tensor<f32>>> {
        match &self.predictor {
            Predictor::Oracle(index) => samples
                .iter()
                .map(|s| index.get(&image_key(&s.image)).cloned().ok_or_else(|| Error::State("oracle has no matte for this image".into())))
                .collect(),
            Predictor::Model(params) => {
                let chunks: Vec<Vec<Tensor<f32>>> = samples
                    .par_chunks(PREDICT_CHUNK)
                    .map(|chunk| {
                        let batch = self.config.model.prepare(chunk)?;
                        let (alpha, _) = predict(params, &self.config.model, &batch)?;
                        split_alpha(&alpha)
                    })
                    .collect::<Result<_>>()?;
                Ok(chunks.into_iter().flatten().collect())
            }
        }
    }

    /// Alpha and the final cross-attention map of one sample.
    pub fn predict_with_attention(&self, sample: &Sample) -> Result<(Tensor<f32>, AttentionMap)> {
        let Predictor::Model(params) = &self.predictor else {
            return Err(Error::State("an oracle checkpoint has no attention".into()));
        };
        let batch = self.config.model.prepare(std::slice::from_ref(sample))?;
        let (alpha, cross) = predict(params, &self.config.model, &batch)?;
        let (probs, h, w) = cross.ok_or_else(|| Error::State("the model has no prompt cross-attention layer".into()))?;
        let map = export_attention_map(&probs, 0, self.config.model.unet.heads, h, w)?;
        Ok((split_alpha(&alpha)?.remove(0), map))
    }
}

fn split_alpha(alpha: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
    let &[n, 1, h, w] = alpha.shape() else {
        return Err(crate::error::dim_err!("alpha batch must be [N, 1, H, W], got {:?}", alpha.shape()));
    };
    (0..n).map(|i| Tensor::new([h, w], alpha.data()[i * h * w..(i + 1) * h * w].to_vec())).collect()
}

/// Nearest-neighbour enlargement of an attention map to `height x width`.
pub fn attention_image(map: &AttentionMap, height: usize, width: usize) -> Tensor<f32> {
    Tensor::from_fn([height, width], |i| {
        let (y, x) = (i / width * map.height / height, i % width * map.width / width);
        map.values[y * map.width + x] as f32
    })
}
