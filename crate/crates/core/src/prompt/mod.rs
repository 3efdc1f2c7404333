//! Visual prompts and the conditioning signals derived from them.
//!
//! A prompt is turned into three things: a rasterized prompt image that is
//! encoded next to the input image, a coordinate/opacity embedding that takes
//! the place of the diffusion time embedding, and a spatial attention mask
//! that biases self-attention toward the indicated region.

pub mod embedding;
pub mod mask;
pub mod raster;

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{arg_err, Error, Result};

pub use embedding::{
    cond_embedding, coord_embedding, mask_bbox, opacity_embedding, point_pad, sinusoidal_encode,
    CondEmbedding, CoordEmbedding, LinearRef,
};
pub use mask::{attention_mask_build, AttentionMask, MaskKind};
pub use raster::rasterize_prompt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Point,
    Box,
    Mask,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::Point, PromptKind::Box, PromptKind::Mask];

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::Point => "point",
            PromptKind::Box => "box",
            PromptKind::Mask => "mask",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(PromptKind::Point),
            "box" => Ok(PromptKind::Box),
            "mask" => Ok(PromptKind::Mask),
            other => Err(arg_err!("unknown prompt kind {other:?}")),
        }
    }
}

/// Axis-aligned box in normalized image coordinates, `x1 < x2`, `y1 < y2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bbox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Bbox {
    /// Canonicalizes corner order and validates the range.
    pub fn new(xa: f64, ya: f64, xb: f64, yb: f64) -> Result<Self> {
        let b = Bbox { x1: xa.min(xb), y1: ya.min(yb), x2: xa.max(xb), y2: ya.max(yb) };
        for v in b.coords() {
            if !(0.0..=1.0).contains(&v) {
                return Err(arg_err!("box coordinate {v} outside [0, 1]"));
            }
        }
        if b.x1 >= b.x2 || b.y1 >= b.y2 {
            return Err(arg_err!("degenerate box {b:?}"));
        }
        Ok(b)
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Row-major binary grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, cells: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || cells.len() != width * height {
            return Err(arg_err!("mask of {width}x{height} cannot hold {} cells", cells.len()));
        }
        Ok(BinaryMask { width, height, cells })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let cells = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        BinaryMask { width, height, cells }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Nearest-neighbor resample to `width × height`.
    pub fn resample(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| {
            let sx = ((x * self.width) / width).min(self.width - 1);
            let sy = ((y * self.height) / height).min(self.height - 1);
            self.get(sx, sy)
        })
    }
}

/// A user's indication of the target object.
#[derive(Clone, Debug, PartialEq)]
pub enum VisualPrompt {
    /// One or more `(x, y)` clicks in `[0, 1]²`.
    Points(Vec<[f64; 2]>),
    Box(Bbox),
    Mask(BinaryMask),
}

impl VisualPrompt {
    pub fn points(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(arg_err!("a point prompt needs at least one point"));
        }
        for p in &points {
            if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
                return Err(arg_err!("point {p:?} outside [0, 1]²"));
            }
        }
        Ok(VisualPrompt::Points(points))
    }

    pub fn bbox(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Ok(VisualPrompt::Box(Bbox::new(x1, y1, x2, y2)?))
    }

    pub fn mask(mask: BinaryMask) -> Result<Self> {
        if mask.count() == 0 {
            return Err(arg_err!("mask prompt has no set cell"));
        }
        Ok(VisualPrompt::Mask(mask))
    }

    pub fn kind(&self) -> PromptKind {
        match self {
            VisualPrompt::Points(_) => PromptKind::Point,
            VisualPrompt::Box(_) => PromptKind::Box,
            VisualPrompt::Mask(_) => PromptKind::Mask,
        }
    }
}

/// 0 marks a transparent object, 1 an opaque one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum OpacityLabel {
    Transparent,
    #[default]
    Opaque,
}

impl OpacityLabel {
    pub fn from_value(v: u8) -> Result<Self> {
        match v {
            0 => Ok(OpacityLabel::Transparent),
            1 => Ok(OpacityLabel::Opaque),
            other => Err(arg_err!("opacity must be 0 or 1, got {other}")),
        }
    }

    pub fn value(self) -> u8 {
        match self {
            OpacityLabel::Transparent => 0,
            OpacityLabel::Opaque => 1,
        }
    }
}

/// Contents of a prompt file: one prompt plus an optional opacity line.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptFile {
    pub prompt: VisualPrompt,
    pub opacity: OpacityLabel,
}

impl PromptFile {
    /// Parses the textual format. `mask` paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut prompt = None;
        let mut opacity = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let keyword = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            let bad = |msg: &str| Error::Format(format!("prompt line {}: {msg}", lineno + 1));
            let numbers = || -> Result<Vec<f64>> {
                rest.iter().map(|t| t.parse::<f64>().map_err(|_| bad(&format!("not a number: {t}")))).collect()
            };
            let parsed = match keyword {
                "point" => {
                    let v = numbers()?;
                    if v.is_empty() || v.len() % 2 != 0 {
                        return Err(bad("point needs x y pairs"));
                    }
                    Some(VisualPrompt::points(v.chunks(2).map(|c| [c[0], c[1]]).collect())?)
                }
                "box" => {
                    let v = numbers()?;
                    if v.len() != 4 {
                        return Err(bad("box needs x1 y1 x2 y2"));
                    }
                    Some(VisualPrompt::bbox(v[0], v[1], v[2], v[3])?)
                }
                "mask" => {
                    if rest.len() != 1 {
                        return Err(bad("mask needs exactly one path"));
                    }
                    let path = base_dir.join(rest[0]);
                    Some(VisualPrompt::mask(crate::imageio::read_binary_mask(&path)?)?)
                }
                "opacity" => {
                    let v = rest.first().and_then(|t| t.parse::<u8>().ok()).ok_or_else(|| bad("opacity needs 0 or 1"))?;
                    opacity = Some(OpacityLabel::from_value(v)?);
                    None
                }
                other => return Err(bad(&format!("unknown keyword {other:?}"))),
            };
            if let Some(p) = parsed {
                if prompt.replace(p).is_some() {
                    return Err(bad("only one prompt per file is supported"));
                }
            }
        }
        let prompt = prompt.ok_or_else(|| Error::Format("prompt file holds no prompt".into()))?;
        Ok(PromptFile { prompt, opacity: opacity.unwrap_or_default() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Writes the file; a mask prompt is stored as a PNG next to it under `mask_name`.
    pub fn save(&self, path: &Path, mask_name: &str) -> Result<()> {
        let mut text = String::new();
        match &self.prompt {
            VisualPrompt::Points(points) => {
                text.push_str("point");
                for p in points {
                    text.push_str(&format!(" {} {}", p[0], p[1]));
                }
            }
            VisualPrompt::Box(b) => text.push_str(&format!("box {} {} {} {}", b.x1, b.y1, b.x2, b.y2)),
            VisualPrompt::Mask(m) => {
                let dir: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
                crate::imageio::write_binary_mask(&dir.join(mask_name), m)?;
                text.push_str(&format!("mask {mask_name}"));
            }
        }
        text.push_str(&format!("\nopacity {}\n", self.opacity.value()));
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_canonicalizes_and_validates() {
        let b = Bbox::new(0.8, 0.9, 0.2, 0.1).unwrap();
        assert_eq!(b.coords(), [0.2, 0.1, 0.8, 0.9]);
        assert!(Bbox::new(0.2, 0.2, 0.2, 0.5).is_err());
        assert!(Bbox::new(-0.1, 0.2, 0.3, 0.5).is_err());
    }

    #[test]
    fn prompt_validity() {
        assert!(VisualPrompt::points(vec![]).is_err());
        assert!(VisualPrompt::points(vec![[0.5, 1.2]]).is_err());
        assert!(VisualPrompt::mask(BinaryMask::from_fn(3, 3, |_, _| false)).is_err());
        assert!(OpacityLabel::from_value(2).is_err());
    }

    #[test]
    fn parses_prompt_text() {
        let f = PromptFile::parse("point 0.1 0.2 0.3 0.4\nopacity 0\n", Path::new(".")).unwrap();
        assert_eq!(f.prompt, VisualPrompt::Points(vec![[0.1, 0.2], [0.3, 0.4]]));
        assert_eq!(f.opacity, OpacityLabel::Transparent);

        let f = PromptFile::parse("# comment\nbox 0.1 0.2 0.6 0.7", Path::new(".")).unwrap();
        assert_eq!(f.opacity, OpacityLabel::Opaque);
        assert_eq!(f.prompt.kind(), PromptKind::Box);

        for bad in ["point 0.1", "box 0 0 1", "opacity 3\npoint 0.5 0.5", "circle 1 2", "", "point 0.1 0.1\nbox 0 0 1 1"] {
            assert!(PromptFile::parse(bad, Path::new(".")).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn mask_prompt_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mask = BinaryMask::from_fn(8, 6, |x, y| (2..5).contains(&x) && y > 2);
        let file = PromptFile { prompt: VisualPrompt::mask(mask).unwrap(), opacity: OpacityLabel::Transparent };
        let path = dir.path().join("prompt.txt");
        file.save(&path, "mask.png").unwrap();
        assert_eq!(PromptFile::load(&path).unwrap(), file);
    }
}
