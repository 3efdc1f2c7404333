//! On-disk scene directories.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{make_scene_seeded, sample_prompt, scene_seed, SceneConfig, ShapeKind, SynthScene};
use crate::error::{Error, Result};
use crate::imageio;
use crate::prompt::{OpacityLabel, PromptFile, PromptKind, VisualPrompt};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT: &str = "promptmatte-scenes";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub count: usize,
    pub seed: u64,
    pub scene: SceneConfig,
}

/// Contents of `meta.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneMeta {
    pub seed: u64,
    pub kind: ShapeKind,
    pub opacity: OpacityLabel,
    pub distractor_count: usize,
}

impl SceneMeta {
    pub fn to_text(&self) -> String {
        format!(
            "seed {}\nkind {}\nopacity {}\ndistractor_count {}\n",
            self.seed,
            self.kind,
            self.opacity.value(),
            self.distractor_count
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (mut seed, mut kind, mut opacity, mut count) = (None, None, None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line.split_once(char::is_whitespace).ok_or_else(|| Error::Format(format!("meta line {line:?}")))?;
            let value = value.trim();
            let bad = || Error::Format(format!("bad meta value for {key}: {value:?}"));
            match key {
                "seed" => seed = Some(value.parse().map_err(|_| bad())?),
                "kind" => kind = Some(value.parse().map_err(|_| bad())?),
                "opacity" => opacity = Some(OpacityLabel::from_value(value.parse().map_err(|_| bad())?).map_err(|_| bad())?),
                "distractor_count" => count = Some(value.parse().map_err(|_| bad())?),
                _ => return Err(Error::Format(format!("unknown meta key {key:?}"))),
            }
        }
        let missing = |k: &str| Error::Format(format!("meta.txt lacks {k}"));
        Ok(SceneMeta {
            seed: seed.ok_or_else(|| missing("seed"))?,
            kind: kind.ok_or_else(|| missing("kind"))?,
            opacity: opacity.ok_or_else(|| missing("opacity"))?,
            distractor_count: count.ok_or_else(|| missing("distractor_count"))?,
        })
    }
}

pub fn scene_dir_name(index: usize) -> String {
    format!("scene_{index:06}")
}

/// Writes `image.png`, `alpha.png`, `prompt.txt` and `meta.txt` into `dir`.
pub fn write_scene(dir: &Path, scene: &SynthScene, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    imageio::write_rgb(&dir.join("image.png"), &scene.image.cast())?;
    imageio::write_gray(&dir.join("alpha.png"), &scene.gt_alpha.cast())?;
    PromptFile { prompt: scene.prompt.clone(), opacity: scene.opacity }.save(&dir.join("prompt.txt"), "prompt_mask.png")?;
    let meta = SceneMeta { seed, kind: scene.kind, opacity: scene.opacity, distractor_count: scene.distractor_count };
    std::fs::write(dir.join("meta.txt"), meta.to_text())?;
    Ok(())
}

/// Generates `count` scenes under `root`; scene `i` is seeded with `scene_seed(seed, i)`.
pub fn write_dataset(root: &Path, count: usize, seed: u64, cfg: &SceneConfig) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(root)?;
    (0..count).into_par_iter().try_for_each(|i| {
        let s = scene_seed(seed, i as u64);
        let scene = make_scene_seeded(s, cfg)?;
        write_scene(&root.join(scene_dir_name(i)), &scene, s)
    })?;
    let manifest = Manifest { format: FORMAT.into(), version: 1, count, seed, scene: cfg.clone() };
    std::fs::write(root.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(root.join(MANIFEST))?)?;
    if m.format != FORMAT {
        return Err(Error::Format(format!("{} is not a scene manifest", root.display())));
    }
    Ok(m)
}

/// Scene directories under `root` in name order.
pub fn list_scenes(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::Argument(format!("{} is not a directory", root.display())));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("scene_")))
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// A scene read back from disk. `meta` is absent for external data without `meta.txt`.
#[derive(Clone, Debug)]
pub struct SceneRecord {
    pub dir: PathBuf,
    /// `[3, H, W]`.
    pub image: Tensor<f32>,
    /// `[H, W]`.
    pub alpha: Tensor<f32>,
    pub prompt: PromptFile,
    pub meta: Option<SceneMeta>,
}

impl SceneRecord {
    /// Directory name, used as the scene identifier in reports.
    pub fn name(&self) -> String {
        self.dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| self.dir.display().to_string())
    }

    /// The stored prompt when it already has `kind`, otherwise one drawn from the matte with `seed`.
    pub fn prompt_for(&self, kind: PromptKind, seed: u64) -> Result<VisualPrompt> {
        if self.prompt.prompt.kind() == kind {
            return Ok(self.prompt.prompt.clone());
        }
        sample_prompt(&self.alpha.cast(), kind, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Seed for derived prompts: the scene seed when known, else a hash of the directory name.
    pub fn prompt_seed(&self) -> u64 {
        match &self.meta {
            Some(m) => m.seed,
            None => self.name().bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3)),
        }
    }
}

pub fn load_scene(dir: &Path) -> Result<SceneRecord> {
    let image = imageio::read_rgb(&dir.join("image.png"))?;
    let alpha = imageio::read_gray(&dir.join("alpha.png"))?;
    if image.shape()[1..] != *alpha.shape() {
        return Err(Error::Format(format!("{}: image {:?} and alpha {:?} differ in size", dir.display(), image.shape(), alpha.shape())));
    }
    let prompt = PromptFile::load(&dir.join("prompt.txt"))?;
    let meta_path = dir.join("meta.txt");
    let meta = if meta_path.exists() { Some(SceneMeta::parse(&std::fs::read_to_string(meta_path)?)?) } else { None };
    Ok(SceneRecord { dir: dir.to_path_buf(), image, alpha, prompt, meta })
}
