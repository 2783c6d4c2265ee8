//! Procedural toy faces and line drawings on the canonical facial layout.
//! They back the toy training profile and the test suites; nothing here is
//! meant to look like real data.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{ImageRecord, Manifest, StyleTag};
use super::masks::layout;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

fn hair(y: f64, x: f64) -> bool {
    let dy = (y - 0.38) / 0.30;
    let dx = (x - 0.5) / 0.36;
    dy * dy + dx * dx <= 1.0 && y < 0.36
}

pub fn synthetic_photo(size: usize, rng: &mut impl Rng) -> ImageTensor {
    let bg: [f32; 3] = [rng.random_range(0.2..0.9), rng.random_range(0.2..0.9), rng.random_range(0.2..0.9)];
    let skin: [f32; 3] = {
        let t: f32 = rng.random_range(0.0..1.0);
        [0.95 - 0.4 * t, 0.8 - 0.4 * t, 0.7 - 0.4 * t]
    };
    let hair_tone: f32 = rng.random_range(0.05..0.4);
    let lip: [f32; 3] = [rng.random_range(0.6..0.9), 0.25, 0.3];
    let noise: Vec<f32> = (0..3 * size * size).map(|_| rng.random_range(-0.03..0.03)).collect();
    ImageTensor::from_fn(3, size, size, |c, y, x| {
        let (ny, nx) = (layout::norm(y, size), layout::norm(x, size));
        let inside = |e| layout::inside(e, y, x, size, size);
        let v = if inside(&layout::LEFT_EYE) || inside(&layout::RIGHT_EYE) {
            0.1
        } else if inside(&layout::UPPER_LIP) || inside(&layout::LOWER_LIP) {
            lip[c]
        } else if inside(&layout::NOSE) {
            skin[c] * 0.8
        } else if hair(ny, nx) {
            hair_tone
        } else if inside(&layout::FACE) {
            skin[c]
        } else {
            bg[c]
        };
        (v + noise[(c * size + y) * size + x]).clamp(0.0, 1.0)
    })
}

fn outline(e_inside: impl Fn(usize, usize) -> bool, y: usize, x: usize, size: usize, width: usize) -> bool {
    if !e_inside(y, x) {
        return false;
    }
    let w = width as isize;
    for dy in -w..=w {
        for dx in -w..=w {
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            if yy < 0 || xx < 0 || yy >= size as isize || xx >= size as isize {
                return true;
            }
            if !e_inside(yy as usize, xx as usize) {
                return true;
            }
        }
    }
    false
}

/// A white-background line drawing. Style 1 hatches the hair with thin
/// parallel lines, style 2 is a bare outline, style 3 uses thick lines and a
/// solid dark hair mass.
pub fn synthetic_drawing(size: usize, style: StyleTag, rng: &mut impl Rng) -> ImageTensor {
    let line_w = match style {
        StyleTag::Style3 => (size / 40).max(2),
        _ => 1,
    };
    let spacing = (size / 16).max(2);
    let phase = rng.random_range(0..spacing);
    let shift: f64 = rng.random_range(-0.01..0.01);
    let features = [
        layout::FACE,
        layout::LEFT_EYE,
        layout::RIGHT_EYE,
        layout::NOSE,
        layout::UPPER_LIP,
        layout::LOWER_LIP,
    ];
    ImageTensor::from_fn(1, size, size, |_, y, x| {
        let (ny, nx) = (layout::norm(y, size), layout::norm(x, size) + shift);
        let on_line = features.iter().any(|e| {
            outline(
                |yy, xx| layout::inside(e, yy, xx, size, size),
                y,
                x,
                size,
                line_w,
            )
        });
        if on_line {
            return 0.0;
        }
        if hair(ny, nx) {
            match style {
                StyleTag::Style1 if (y + x + phase) % spacing == 0 => return 0.05,
                StyleTag::Style3 => return 0.02,
                _ => {}
            }
        }
        1.0
    })
}

/// Writes `n_photos` photos and `n_drawings` drawings (styles cycling through
/// 1, 2, 3) as PNGs plus a `manifest.tsv`. Returns the manifest path.
pub fn write_toy_corpus(
    dir: &Path,
    n_photos: usize,
    n_drawings: usize,
    size: usize,
    seed: u64,
) -> Result<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for sub in ["photos", "drawings"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut records = Vec::new();
    for i in 0..n_photos {
        let rel = format!("photos/p{i:03}.png");
        synthetic_photo(size, &mut rng).save_png(dir.join(&rel))?;
        records.push(ImageRecord::photo(format!("p{i:03}"), rel));
    }
    for i in 0..n_drawings {
        let tag = StyleTag::TAGGED[i % 3];
        let rel = format!("drawings/d{i:03}.png");
        synthetic_drawing(size, tag, &mut rng).save_png(dir.join(&rel))?;
        records.push(ImageRecord::drawing(format!("d{i:03}"), rel, tag));
    }
    let manifest = Manifest::new(records)?;
    let path = dir.join("manifest.tsv");
    manifest.save(&path)?;
    Ok(path)
}
