//! Facial-region masks for the local discriminators and for dissection.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const EYES: &str = "eyes";
pub const NOSE: &str = "nose";
pub const LIPS: &str = "lips";
pub const UPPER_LIP: &str = "upper_lip";
pub const LOWER_LIP: &str = "lower_lip";

/// The regions that get a local discriminator, in `D_ln, D_le, D_ll` order.
pub const LOCAL_REGIONS: [&str; 3] = [NOSE, EYES, LIPS];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask buffer of {} cannot hold {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Pixels above 0.5 in the first channel.
    pub fn from_image(img: &ImageTensor) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            data: img.channel(0).iter().map(|&v| v > 0.5).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn contains(&self, other: &Mask) -> bool {
        self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(&a, &b)| a || !b)
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape("mask union of different sizes".into()));
        }
        Ok(Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(),
        })
    }

    pub fn to_image(&self) -> ImageTensor {
        ImageTensor::from_fn(1, self.height, self.width, |_, y, x| {
            if self.get(y, x) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Binary dilation by a disc of the given radius.
    pub fn dilate(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let (h, w) = (self.height, self.width);
        // Row prefix sums turn each disc-row test into an O(1) range query.
        let mut prefix = vec![0u32; h * (w + 1)];
        for y in 0..h {
            for x in 0..w {
                prefix[y * (w + 1) + x + 1] = prefix[y * (w + 1) + x] + self.get(y, x) as u32;
            }
        }
        let r = radius as isize;
        let half_widths: Vec<isize> = (-r..=r)
            .map(|dy| (((r * r - dy * dy) as f64).sqrt()).floor() as isize)
            .collect();
        let mut out = vec![false; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let hit = (-r..=r).any(|dy| {
                    let yy = y + dy;
                    if yy < 0 || yy >= h as isize {
                        return false;
                    }
                    let hw = half_widths[(dy + r) as usize];
                    let lo = (x - hw).max(0) as usize;
                    let hi = ((x + hw).min(w as isize - 1) + 1) as usize;
                    let row = yy as usize * (w + 1);
                    prefix[row + hi] > prefix[row + lo]
                });
                out[y as usize * w + x as usize] = hit;
            }
        }
        Mask {
            height: h,
            width: w,
            data: out,
        }
    }
}

/// Dilation radius in pixels for a relative dilation fraction.
pub fn dilation_radius(dilation_frac: f64, side: usize) -> usize {
    let r = dilation_frac * side as f64;
    // Guard against products like 0.02 * 500 landing just above an integer.
    (r - 1e-9).ceil().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMaskSet {
    pub image_id: String,
    pub regions: BTreeMap<String, Mask>,
}

impl RegionMaskSet {
    pub fn get(&self, region: &str) -> Option<&Mask> {
        self.regions.get(region)
    }

    /// Union of the local-discriminator regions.
    pub fn union_of(&self, names: &[&str], height: usize, width: usize) -> Result<Mask> {
        let mut acc = Mask::empty(height, width);
        for n in names {
            if let Some(m) = self.regions.get(*n) {
                acc = acc.union(m)?;
            }
        }
        Ok(acc)
    }
}

/// A face parser yields raw binary region masks for an image.
pub trait FaceParser: Send + Sync {
    fn parse(&self, image_id: &str, image: &ImageTensor) -> Result<BTreeMap<String, Mask>>;

    fn region_names(&self) -> Vec<String>;
}

/// Parses `image` and dilates every region by a disc of radius
/// `ceil(dilation_frac × side)`.
pub fn region_masks(
    image_id: &str,
    image: &ImageTensor,
    parser: &dyn FaceParser,
    dilation_frac: f64,
) -> Result<RegionMaskSet> {
    if dilation_frac < 0.0 {
        return Err(Error::Validation("dilation_frac must be >= 0".into()));
    }
    let raw = parser.parse(image_id, image)?;
    let radius = dilation_radius(dilation_frac, image.height().max(image.width()));
    let mut regions = BTreeMap::new();
    for (name, mask) in raw {
        if (mask.height(), mask.width()) != (image.height(), image.width()) {
            return Err(Error::Shape(format!(
                "parser mask `{name}` is {}x{}, image is {}x{}",
                mask.height(),
                mask.width(),
                image.height(),
                image.width()
            )));
        }
        regions.insert(name, mask.dilate(radius));
    }
    Ok(RegionMaskSet {
        image_id: image_id.to_string(),
        regions,
    })
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    const fn new(cy: f64, cx: f64, ry: f64, rx: f64) -> Self {
        Self { cy, cx, ry, rx }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

/// Canonical facial layout in normalized `(y, x)` coordinates, shared with
/// the synthetic corpus generator.
pub(crate) mod layout {
    use super::Ellipse;

    pub(crate) const FACE: Ellipse = Ellipse::new(0.52, 0.5, 0.38, 0.30);
    pub(crate) const LEFT_EYE: Ellipse = Ellipse::new(0.42, 0.38, 0.03, 0.06);
    pub(crate) const RIGHT_EYE: Ellipse = Ellipse::new(0.42, 0.62, 0.03, 0.06);
    pub(crate) const NOSE: Ellipse = Ellipse::new(0.55, 0.5, 0.07, 0.035);
    pub(crate) const UPPER_LIP: Ellipse = Ellipse::new(0.665, 0.5, 0.018, 0.09);
    pub(crate) const LOWER_LIP: Ellipse = Ellipse::new(0.695, 0.5, 0.02, 0.08);

    pub(crate) fn norm(v: usize, n: usize) -> f64 {
        (v as f64 + 0.5) / n as f64
    }

    pub(crate) fn inside(e: &Ellipse, y: usize, x: usize, h: usize, w: usize) -> bool {
        e.contains(norm(y, h), norm(x, w))
    }
}

/// Parser for portrait-framed inputs that assumes the canonical facial layout.
/// Images without any intensity variation are reported as faceless.
#[derive(Clone, Debug, Default)]
pub struct TemplateParser;

impl FaceParser for TemplateParser {
    fn parse(&self, image_id: &str, image: &ImageTensor) -> Result<BTreeMap<String, Mask>> {
        let (lo, hi) = image.min_max();
        if hi - lo < 1e-3 {
            return Err(Error::NoFace(image_id.to_string()));
        }
        let (h, w) = (image.height(), image.width());
        let region = |es: &[Ellipse]| {
            Mask::from_fn(h, w, |y, x| es.iter().any(|e| layout::inside(e, y, x, h, w)))
        };
        let mut out = BTreeMap::new();
        out.insert(EYES.to_string(), region(&[layout::LEFT_EYE, layout::RIGHT_EYE]));
        out.insert(NOSE.to_string(), region(&[layout::NOSE]));
        out.insert(UPPER_LIP.to_string(), region(&[layout::UPPER_LIP]));
        out.insert(LOWER_LIP.to_string(), region(&[layout::LOWER_LIP]));
        out.insert(LIPS.to_string(), region(&[layout::UPPER_LIP, layout::LOWER_LIP]));
        Ok(out)
    }

    fn region_names(&self) -> Vec<String> {
        [EYES, LIPS, LOWER_LIP, NOSE, UPPER_LIP]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

/// Reads masks exported by an external face-parsing network from
/// `<dir>/<image_id>_<region>.png`. A missing mask set means no face.
#[derive(Clone, Debug)]
pub struct MaskDirParser {
    dir: PathBuf,
    regions: Vec<String>,
}

impl MaskDirParser {
    pub fn new(dir: impl Into<PathBuf>, regions: Vec<String>) -> Self {
        Self {
            dir: dir.into(),
            regions,
        }
    }

    fn path_for(&self, id: &str, region: &str) -> PathBuf {
        self.dir.join(format!("{id}_{region}.png"))
    }
}

impl FaceParser for MaskDirParser {
    fn parse(&self, image_id: &str, image: &ImageTensor) -> Result<BTreeMap<String, Mask>> {
        let mut out = BTreeMap::new();
        for region in &self.regions {
            let p = self.path_for(image_id, region);
            if !p.exists() {
                continue;
            }
            let img = super::preprocess::decode_image(&p)?;
            let img = img.resize_exact(
                image.width() as u32,
                image.height() as u32,
                image::imageops::FilterType::Nearest,
            );
            let t = ImageTensor::from_dynamic(&img, 1)?;
            out.insert(region.clone(), Mask::from_image(&t));
        }
        if out.is_empty() {
            return Err(Error::NoFace(image_id.to_string()));
        }
        Ok(out)
    }

    fn region_names(&self) -> Vec<String> {
        self.regions.clone()
    }
}

/// Writes a mask set in the layout `MaskDirParser` reads.
pub fn save_mask_set(dir: &Path, set: &RegionMaskSet) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, mask) in &set.regions {
        mask.to_image()
            .save_png(dir.join(format!("{}_{name}.png", set.image_id)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct DiscParser {
        radius: f64,
    }

    impl FaceParser for DiscParser {
        fn parse(&self, _: &str, image: &ImageTensor) -> Result<BTreeMap<String, Mask>> {
            let (h, w) = (image.height(), image.width());
            let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
            let m = Mask::from_fn(h, w, |y, x| {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                dy * dy + dx * dx <= self.radius * self.radius
            });
            Ok(BTreeMap::from([("disc".to_string(), m)]))
        }
        fn region_names(&self) -> Vec<String> {
            vec!["disc".into()]
        }
    }

    #[test]
    fn radius_rule() {
        assert_eq!(dilation_radius(0.02, 512), 11);
        assert_eq!(dilation_radius(0.0, 512), 0);
        assert_eq!(dilation_radius(0.02, 500), 10);
    }

    #[test]
    fn zero_dilation_is_raw_parse() {
        let img = ImageTensor::from_fn(3, 32, 32, |_, y, x| ((x + y) % 7) as f32 / 7.0);
        let raw = TemplateParser.parse("a", &img).unwrap();
        let set = region_masks("a", &img, &TemplateParser, 0.0).unwrap();
        assert_eq!(set.regions, raw);
    }

    #[test]
    fn dilated_disc_is_superset() {
        let img = ImageTensor::filled(1, 64, 64, 0.5);
        let parser = DiscParser { radius: 6.0 };
        let raw = parser.parse("x", &img).unwrap().remove("disc").unwrap();
        let set = region_masks("x", &img, &parser, 0.05).unwrap();
        let dil = set.get("disc").unwrap();
        assert!(dil.contains(&raw));
        assert!(dil.area() > raw.area());
        // radius ceil(0.05*64)=4 grows a radius-6 disc to radius ~10
        let expected = std::f64::consts::PI * 10.0 * 10.0;
        assert!((dil.area() as f64 - expected).abs() / expected < 0.15);
    }

    #[test]
    fn dilation_of_single_pixel_is_disc() {
        let m = Mask::from_fn(21, 21, |y, x| y == 10 && x == 10);
        let d = m.dilate(3);
        for y in 0..21 {
            for x in 0..21 {
                let dy = y as isize - 10;
                let dx = x as isize - 10;
                assert_eq!(d.get(y, x), dy * dy + dx * dx <= 9, "({y},{x})");
            }
        }
    }

    #[test]
    fn template_regions_are_small() {
        let img = ImageTensor::from_fn(3, 128, 128, |c, y, x| ((c + x * y) % 5) as f32 / 5.0);
        let set = region_masks("a", &img, &TemplateParser, 0.02).unwrap();
        for name in LOCAL_REGIONS {
            let m = set.get(name).unwrap();
            assert!(!m.is_empty());
            assert!((m.area() as f64) / (128.0 * 128.0) < 0.05, "{name}");
        }
    }

    #[test]
    fn blank_image_has_no_face() {
        let img = ImageTensor::filled(3, 32, 32, 1.0);
        assert!(matches!(
            region_masks("blank", &img, &TemplateParser, 0.02),
            Err(Error::NoFace(_))
        ));
    }

    #[test]
    fn mask_dir_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::from_fn(3, 32, 32, |_, y, _| y as f32 / 32.0);
        let set = region_masks("p1", &img, &TemplateParser, 0.0).unwrap();
        save_mask_set(dir.path(), &set).unwrap();
        let parser = MaskDirParser::new(dir.path(), TemplateParser.region_names());
        let back = parser.parse("p1", &img).unwrap();
        assert_eq!(back, set.regions);
        assert!(matches!(parser.parse("p2", &img), Err(Error::NoFace(_))));
    }
}
