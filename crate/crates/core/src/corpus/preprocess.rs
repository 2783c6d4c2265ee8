use std::path::Path;

use image::imageops::FilterType;
use image::DynamicImage;
use rand::Rng;

use super::manifest::ImageKind;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CropMode {
    /// Deterministic, used at evaluation time.
    Center,
    /// Offsets given as fractions in `[0, 1]` of the available slack.
    Offset(f32, f32),
}

impl CropMode {
    pub fn random(rng: &mut impl Rng) -> Self {
        CropMode::Offset(rng.random(), rng.random())
    }
}

pub fn channels_for(kind: ImageKind) -> usize {
    match kind {
        ImageKind::Photo => 3,
        ImageKind::Drawing => 1,
    }
}

/// Resizes the shorter side to `size` and crops a `size×size` window.
/// Photos come out with 3 channels, drawings with 1.
pub fn preprocess(
    image: &DynamicImage,
    size: usize,
    kind: ImageKind,
    crop: CropMode,
) -> Result<ImageTensor> {
    if size < 16 {
        return Err(Error::Validation(format!("preprocess size must be >= 16, got {size}")));
    }
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Validation("image has zero extent".into()));
    }
    let resized = if w.min(h) == size {
        image.clone()
    } else {
        let scale = size as f64 / w.min(h) as f64;
        let nw = ((w as f64 * scale).round() as u32).max(size as u32);
        let nh = ((h as f64 * scale).round() as u32).max(size as u32);
        image.resize_exact(nw, nh, FilterType::Triangle)
    };
    let (rw, rh) = (resized.width() as usize, resized.height() as usize);
    let (fx, fy) = match crop {
        CropMode::Center => (0.5, 0.5),
        CropMode::Offset(fx, fy) => (fx.clamp(0.0, 1.0), fy.clamp(0.0, 1.0)),
    };
    let x0 = ((rw - size) as f32 * fx).round() as u32;
    let y0 = ((rh - size) as f32 * fy).round() as u32;
    let cropped = resized.crop_imm(x0, y0, size as u32, size as u32);
    ImageTensor::from_dynamic(&cropped, channels_for(kind))
}

pub fn decode_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_image(path: impl AsRef<Path>, size: usize, kind: ImageKind) -> Result<ImageTensor> {
    let img = decode_image(path.as_ref())?;
    preprocess(&img, size, kind, CropMode::Center)
}

/// Decodes an in-memory PNG or JPEG and preprocesses it with a centre crop.
pub fn load_image_bytes(bytes: &[u8], size: usize, kind: ImageKind) -> Result<ImageTensor> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Decode {
        path: "<upload>".into(),
        message: e.to_string(),
    })?;
    preprocess(&img, size, kind, CropMode::Center)
}
