//! PNG reading and writing for images, alpha mattes and binary masks.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{dim_err, Result};
use crate::prompt::BinaryMask;
use crate::tensor::Tensor;

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads an image as `[3, H, W]` in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new([3, h, w], data)
}

/// Loads a single-channel image as `[H, W]` in `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor::new([h, w], img.pixels().map(|p| p[0] as f32 / 255.0).collect())
}

pub fn write_rgb(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let [c, h, w] = img.shape() else {
        return Err(dim_err!("RGB image must be [3, H, W], got {:?}", img.shape()));
    };
    if *c != 3 {
        return Err(dim_err!("RGB image must have 3 channels, got {c}"));
    }
    let (h, w) = (*h, *w);
    let d = img.data();
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to_u8(d[i]), to_u8(d[h * w + i]), to_u8(d[2 * h * w + i])])
    });
    out.save(path)?;
    Ok(())
}

/// Writes an `[H, W]` (or `[1, H, W]`) map in `[0, 1]` as 8-bit gray.
pub fn write_gray(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let (h, w) = match img.shape() {
        [h, w] | [1, h, w] => (*h, *w),
        other => return Err(dim_err!("gray image must be [H, W], got {other:?}")),
    };
    let d = img.data();
    let out = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(d[y as usize * w + x as usize])]));
    out.save(path)?;
    Ok(())
}

/// Any pixel brighter than mid-gray counts as set.
pub fn read_binary_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)?.to_luma8();
    let cells = img.pixels().map(|p| p[0] > 127).collect();
    BinaryMask::new(img.width() as usize, img.height() as usize, cells)
}

pub fn write_binary_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let out = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    out.save(path)?;
    Ok(())
}
