//! Rasterization of prompts into single-channel images.

use super::VisualPrompt;
use crate::error::{arg_err, Result};
use crate::tensor::Tensor;

/// Disk radius of a point click as a fraction of the shorter image side.
pub const POINT_RADIUS: f64 = 0.02;

/// Coverage of a pixel whose center lies `d` pixels from a disk of radius `r`.
pub fn disk_coverage(d: f64, r: f64) -> f64 {
    (r + 0.5 - d).clamp(0.0, 1.0)
}

/// Renders `prompt` as an `[H, W]` image in `[0, 1]`.
pub fn rasterize_prompt(prompt: &VisualPrompt, height: usize, width: usize) -> Result<Tensor<f32>> {
    if height < 8 || width < 8 {
        return Err(arg_err!("prompt raster must be at least 8x8, got {height}x{width}"));
    }
    let (hf, wf) = (height as f64, width as f64);
    let data: Vec<f32> = match prompt {
        VisualPrompt::Points(points) => {
            let r = POINT_RADIUS * hf.min(wf);
            let mut img = vec![0f32; height * width];
            for p in points {
                let (cx, cy) = (p[0] * wf, p[1] * hf);
                let reach = r + 1.0;
                let y0 = (cy - reach).floor().max(0.0) as usize;
                let y1 = ((cy + reach).ceil() as usize).min(height);
                let x0 = (cx - reach).floor().max(0.0) as usize;
                let x1 = ((cx + reach).ceil() as usize).min(width);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let d = (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy);
                        let v = &mut img[y * width + x];
                        *v = v.max(disk_coverage(d, r) as f32);
                    }
                }
            }
            img
        }
        VisualPrompt::Box(b) => (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| {
                let (px, py) = ((x as f64 + 0.5) / wf, (y as f64 + 0.5) / hf);
                let inside = px >= b.x1 && px <= b.x2 && py >= b.y1 && py <= b.y2;
                inside as u8 as f32
            })
            .collect(),
        VisualPrompt::Mask(m) => m.resample(width, height).cells().iter().map(|&c| c as u8 as f32).collect(),
    };
    Tensor::new([height, width], data)
}
