//! Spatial attention masks derived from prompts.

use super::{mask_bbox, Bbox, VisualPrompt};
use crate::error::{arg_err, Result};

/// Default Gaussian width of point masks, in normalized image units.
pub const DEFAULT_SIGMA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Hard,
    Soft,
}

/// Row-major `h × w` weighting map in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub kind: MaskKind,
}

impl AttentionMask {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn ones(height: usize, width: usize) -> Self {
        AttentionMask { height, width, values: vec![1.0; height * width], kind: MaskKind::Hard }
    }

    /// Area-average by `factor`; hard masks are re-thresholded at 0.5 and never left empty.
    pub fn downsample(&self, factor: usize) -> Result<AttentionMask> {
        if factor == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return Err(arg_err!("factor {factor} does not divide mask {}x{}", self.height, self.width));
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let mut values = vec![0.0; h * w];
        for y in 0..self.height {
            for x in 0..self.width {
                values[(y / factor) * w + x / factor] += self.get(x, y);
            }
        }
        let area = (factor * factor) as f64;
        values.iter_mut().for_each(|v| *v /= area);
        if self.kind == MaskKind::Hard {
            let best = values.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, v)| if v > b.1 { (i, v) } else { b }).0;
            values.iter_mut().for_each(|v| *v = if *v >= 0.5 { 1.0 } else { 0.0 });
            if values.iter().all(|&v| v == 0.0) {
                values[best] = 1.0;
            }
        }
        Ok(AttentionMask { height: h, width: w, values, kind: self.kind })
    }
}

fn cell_of(v: f64, n: usize) -> usize {
    ((v * n as f64).floor().max(0.0) as usize).min(n - 1)
}

fn cell_center(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

fn box_cells(b: &Bbox, h: usize, w: usize) -> Vec<f64> {
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (cx, cy) = (cell_center(x, w), cell_center(y, h));
            let inside = cx >= b.x1 && cx <= b.x2 && cy >= b.y1 && cy <= b.y2;
            values.push(inside as u8 as f64);
        }
    }
    values
}

/// Builds the mask at `h × w`. `sigma` only affects point prompts.
pub fn attention_mask_build(prompt: &VisualPrompt, h: usize, w: usize, sigma: f64) -> Result<AttentionMask> {
    if h == 0 || w == 0 {
        return Err(arg_err!("attention mask needs a positive size, got {h}x{w}"));
    }
    let (values, kind) = match prompt {
        VisualPrompt::Points(points) => {
            if !(sigma > 0.0) {
                return Err(arg_err!("soft mask sigma must be positive, got {sigma}"));
            }
            let centers: Vec<(f64, f64)> = points
                .iter()
                .map(|p| (cell_center(cell_of(p[0], w), w), cell_center(cell_of(p[1], h), h)))
                .collect();
            let denom = 2.0 * sigma * sigma;
            let mut values = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    let (cx, cy) = (cell_center(x, w), cell_center(y, h));
                    let v = centers
                        .iter()
                        .map(|&(px, py)| (-((cx - px).powi(2) + (cy - py).powi(2)) / denom).exp())
                        .fold(0.0, f64::max);
                    values.push(v);
                }
            }
            (values, MaskKind::Soft)
        }
        VisualPrompt::Box(b) => {
            let mut values = box_cells(b, h, w);
            fallback(&mut values, b, h, w);
            (values, MaskKind::Hard)
        }
        VisualPrompt::Mask(m) => {
            let mut values: Vec<f64> = m.resample(w, h).cells().iter().map(|&c| c as u8 as f64).collect();
            fallback(&mut values, &mask_bbox(m)?, h, w);
            (values, MaskKind::Hard)
        }
    };
    Ok(AttentionMask { height: h, width: w, values, kind })
}

/// Regions that cover no cell center still mark the cell holding their center.
fn fallback(values: &mut [f64], b: &Bbox, h: usize, w: usize) {
    if values.iter().all(|&v| v == 0.0) {
        let x = cell_of((b.x1 + b.x2) / 2.0, w);
        let y = cell_of((b.y1 + b.y2) / 2.0, h);
        values[y * w + x] = 1.0;
    }
}
