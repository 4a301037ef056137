//! Grayscale image loading, resizing and normalization.

use candle_core::{Device, Tensor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{DomainTag, ImageBatch, Mask};

/// Row-major single-channel float image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImageF32 {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>,
}

impl GrayImageF32 {
    pub fn new(w: usize, h: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != w * h {
            return Err(Error::shape(format!(
                "image data length {} does not match {w}x{h}",
                data.len()
            )));
        }
        Ok(Self { w, h, data })
    }

    pub fn constant(w: usize, h: usize, value: f32) -> Self {
        Self { w, h, data: vec![value; w * h] }
    }

    /// Wraps into a single-image batch; the image must be square.
    pub fn into_batch(self, domain: DomainTag, id: String, device: &Device) -> Result<ImageBatch> {
        let t = Tensor::from_vec(self.data, (1, 1, self.h, self.w), device)?;
        ImageBatch::new(t, domain, vec![id])
    }

    /// Thresholds at 0.5 into a single-image binary mask.
    pub fn into_mask(self, device: &Device) -> Result<Mask> {
        let bits: Vec<f32> = self.data.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
        let t = Tensor::from_vec(bits, (1, self.h, self.w), device)?;
        Mask::new(t)
    }
}

/// Loads an 8-bit grayscale PNG and scales it to `[0, 1]`.
pub fn load_gray(path: &Path) -> Result<GrayImageF32> {
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Image(other),
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    GrayImageF32::new(w, h, data)
}

/// Writes as an 8-bit grayscale PNG (values clamped to `[0, 1]`).
pub fn save_gray(path: &Path, img: &GrayImageF32) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let out = image::GrayImage::from_raw(img.w as u32, img.h as u32, bytes)
        .ok_or_else(|| Error::shape("image buffer does not match dimensions"))?;
    out.save(path)?;
    Ok(())
}

/// Bilinear resample with pixel-center alignment. Resizing to the same size
/// is an exact identity.
pub fn resize_bilinear(img: &GrayImageF32, size: usize) -> GrayImageF32 {
    if img.w == size && img.h == size {
        return img.clone();
    }
    let sx = img.w as f64 / size as f64;
    let sy = img.h as f64 / size as f64;
    let mut data = vec![0f32; size * size];
    for r in 0..size {
        let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.h - 1);
        let wy = (fy - y0 as f64) as f32;
        for c in 0..size {
            let fx = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.w - 1);
            let wx = (fx - x0 as f64) as f32;
            let top = img.data[y0 * img.w + x0] * (1.0 - wx) + img.data[y0 * img.w + x1] * wx;
            let bot = img.data[y1 * img.w + x0] * (1.0 - wx) + img.data[y1 * img.w + x1] * wx;
            data[r * size + c] = top * (1.0 - wy) + bot * wy;
        }
    }
    GrayImageF32 { w: size, h: size, data }
}

/// Nearest-neighbor resample; keeps labels binary.
pub fn resize_nearest(img: &GrayImageF32, size: usize) -> GrayImageF32 {
    if img.w == size && img.h == size {
        return img.clone();
    }
    let sx = img.w as f64 / size as f64;
    let sy = img.h as f64 / size as f64;
    let mut data = vec![0f32; size * size];
    for r in 0..size {
        let y = (((r as f64 + 0.5) * sy).floor() as usize).min(img.h - 1);
        for c in 0..size {
            let x = (((c as f64 + 0.5) * sx).floor() as usize).min(img.w - 1);
            data[r * size + c] = img.data[y * img.w + x];
        }
    }
    GrayImageF32 { w: size, h: size, data }
}

/// Resizes to `size x size` (bilinear), clamps to `[0, 1]` and optionally
/// inverts (`v -> 1 - v`, applied after scaling so inversion is an exact
/// involution).
pub fn preprocess_image(img: &GrayImageF32, size: usize, invert: bool) -> Result<GrayImageF32> {
    if size == 0 {
        return Err(Error::shape("target size must be positive"));
    }
    let mut out = resize_bilinear(img, size);
    for v in &mut out.data {
        *v = v.clamp(0.0, 1.0);
        if invert {
            *v = 1.0 - *v;
        }
    }
    Ok(out)
}

/// Resizes a label image with nearest-neighbor and binarizes at 0.5.
pub fn preprocess_mask(img: &GrayImageF32, size: usize) -> Result<GrayImageF32> {
    if size == 0 {
        return Err(Error::shape("target size must be positive"));
    }
    let mut out = resize_nearest(img, size);
    for v in &mut out.data {
        *v = if *v > 0.5 { 1.0 } else { 0.0 };
    }
    Ok(out)
}

/// Full single-image preprocessing into a batch of one.
pub fn preprocess(
    img: &GrayImageF32,
    size: usize,
    invert: bool,
    domain: DomainTag,
    id: String,
    device: &Device,
) -> Result<ImageBatch> {
    preprocess_image(img, size, invert)?.into_batch(domain, id, device)
}
