use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::corpus::{
    load_image, region_masks, FaceParser, ImageKind, Manifest, Mask, StyleTag, LOCAL_REGIONS,
};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// An image with its local-region masks, in [`LOCAL_REGIONS`] order. A
/// region the parser did not find is an empty mask.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: ImageTensor,
    pub masks: Vec<Mask>,
}

impl Sample {
    pub fn flipped(&self) -> Sample {
        Sample {
            id: self.id.clone(),
            image: self.image.flip_horizontal(),
            masks: self.masks.iter().map(flip_mask).collect(),
        }
    }
}

fn flip_mask(m: &Mask) -> Mask {
    let w = m.width();
    Mask::from_fn(m.height(), w, |y, x| m.get(y, w - 1 - x))
}

fn local_masks(id: &str, image: &ImageTensor, parser: &dyn FaceParser, dilation: f64) -> Vec<Mask> {
    let (h, w) = (image.height(), image.width());
    match region_masks(id, image, parser, dilation) {
        Ok(set) => LOCAL_REGIONS
            .iter()
            .map(|r| set.get(r).cloned().unwrap_or_else(|| Mask::empty(h, w)))
            .collect(),
        Err(e) => {
            log::warn!("no region masks for {id}: {e}");
            LOCAL_REGIONS.iter().map(|_| Mask::empty(h, w)).collect()
        }
    }
}

/// Preprocessed unpaired training data.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub photos: Vec<Sample>,
    pub drawings: Vec<Sample>,
    /// Style tag per drawing; untagged drawings still train the GAN.
    pub tags: Vec<StyleTag>,
}

impl TrainData {
    pub fn new(
        photos: Vec<(String, ImageTensor)>,
        drawings: Vec<(String, ImageTensor, StyleTag)>,
        parser: &dyn FaceParser,
        dilation_frac: f64,
    ) -> Result<Self> {
        if photos.is_empty() || drawings.is_empty() {
            return Err(Error::Validation(
                "training needs at least one photo and one drawing".into(),
            ));
        }
        let photos = photos
            .into_iter()
            .map(|(id, image)| {
                let masks = local_masks(&id, &image, parser, dilation_frac);
                Sample { id, image, masks }
            })
            .collect();
        let mut tags = Vec::new();
        let drawings = drawings
            .into_iter()
            .map(|(id, image, tag)| {
                tags.push(tag);
                let masks = local_masks(&id, &image, parser, dilation_frac);
                Sample { id, image, masks }
            })
            .collect();
        Ok(Self {
            photos,
            drawings,
            tags,
        })
    }

    /// Loads every manifest entry at `size` with a centre crop.
    pub fn from_manifest(
        manifest: &Manifest,
        size: usize,
        parser: &dyn FaceParser,
        dilation_frac: f64,
    ) -> Result<Self> {
        let photos = manifest
            .photos()
            .map(|r| Ok((r.id.clone(), load_image(&r.path, size, ImageKind::Photo)?)))
            .collect::<Result<Vec<_>>>()?;
        let drawings = manifest
            .drawings()
            .map(|r| {
                Ok((
                    r.id.clone(),
                    load_image(&r.path, size, ImageKind::Drawing)?,
                    r.style_tag.unwrap_or(StyleTag::Untagged),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(photos, drawings, parser, dilation_frac)
    }

    pub fn image_size(&self) -> usize {
        self.photos[0].image.height()
    }

    /// Tagged drawings grouped by style index.
    pub fn tagged(&self) -> Vec<(ImageTensor, usize)> {
        self.drawings
            .iter()
            .zip(&self.tags)
            .filter_map(|(s, t)| t.index().map(|i| (s.image.clone(), i)))
            .collect()
    }
}

/// Draws indices with probability inversely proportional to the size of
/// their class, so every class is drawn equally often in expectation.
pub struct BalancedSampler {
    dist: WeightedIndex<f64>,
}

impl BalancedSampler {
    pub fn new(labels: &[usize], classes: usize) -> Result<Self> {
        let mut counts = vec![0usize; classes];
        for &l in labels {
            if l >= classes {
                return Err(Error::Validation(format!("label {l} >= {classes} classes")));
            }
            counts[l] += 1;
        }
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Validation(format!(
                "style {} has no tagged drawings",
                missing + 1
            )));
        }
        let weights: Vec<f64> = labels.iter().map(|&l| 1.0 / counts[l] as f64).collect();
        let dist = WeightedIndex::new(weights)
            .map_err(|e| Error::Validation(format!("balanced sampler: {e}")))?;
        Ok(Self { dist })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        self.dist.sample(rng)
    }
}

/// Random similarity transform ranges for classifier augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augment {
    pub max_rotation_deg: f64,
    /// Fraction of the image side.
    pub max_translation: f64,
    pub scale_range: (f64, f64),
}

impl Default for Augment {
    fn default() -> Self {
        Self {
            max_rotation_deg: 10.0,
            max_translation: 0.05,
            scale_range: (0.9, 1.1),
        }
    }
}

impl Augment {
    pub fn apply(&self, img: &ImageTensor, rng: &mut impl Rng, fill: f32) -> ImageTensor {
        let r = self.max_rotation_deg;
        let t = self.max_translation;
        let angle = rng.random_range(-r..=r).to_radians();
        let tx = rng.random_range(-t..=t) * img.width() as f64;
        let ty = rng.random_range(-t..=t) * img.height() as f64;
        let scale = rng.random_range(self.scale_range.0..=self.scale_range.1);
        warp_similarity(img, angle, scale, tx, ty, fill)
    }
}

/// Rotation by `angle` and scaling about the centre, then translation;
/// bilinear sampling, `fill` outside the source.
pub fn warp_similarity(
    img: &ImageTensor,
    angle: f64,
    scale: f64,
    tx: f64,
    ty: f64,
    fill: f32,
) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let (sin, cos) = angle.sin_cos();
    let sample = |c: usize, y: f64, x: f64| -> f32 {
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let px = |yy: f64, xx: f64| -> f64 {
            if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                fill as f64
            } else {
                img.get(c, yy as usize, xx as usize) as f64
            }
        };
        let top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1.0) * fx;
        let bot = px(y0 + 1.0, x0) * (1.0 - fx) + px(y0 + 1.0, x0 + 1.0) * fx;
        (top * (1.0 - fy) + bot * fy) as f32
    };
    ImageTensor::from_fn(img.channels(), h, w, |c, y, x| {
        // Inverse map from output pixel centre to source coordinates.
        let (dy, dx) = (y as f64 + 0.5 - cy - ty, x as f64 + 0.5 - cx - tx);
        let sx = (cos * dx + sin * dy) / scale + cx - 0.5;
        let sy = (-sin * dx + cos * dy) / scale + cy - 0.5;
        sample(c, sy, sx)
    })
}

/// Count of drawings per tag, for logs.
pub fn tag_counts(tags: &[StyleTag]) -> BTreeMap<StyleTag, usize> {
    let mut m = BTreeMap::new();
    for t in tags {
        *m.entry(*t).or_insert(0) += 1;
    }
    m
}
