//! Generator dissection: per-unit feature maps are upsampled to the input
//! size, binarized at the threshold that maximizes the information quality
//! `I/H` against each facial-region mask, and scored by pooled IoU.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::Serialize;

use crate::corpus::{FaceParser, Mask};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::networks::{style_tensor, Generator};
use crate::style_vector::StyleVector;

/// Units whose best IoU exceeds this are called interpretable.
pub const INTERPRETABLE_IOU: f64 = 0.05;
/// Number of quantile threshold candidates.
pub const THRESHOLD_CANDIDATES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnitReport {
    pub layer: String,
    pub unit: usize,
    /// `None` when no candidate threshold was usable for any region.
    pub best_region: Option<String>,
    pub threshold: Option<f64>,
    pub iou: f64,
    pub interpretable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct DissectionReport {
    pub units: Vec<UnitReport>,
    pub photos_used: usize,
    /// Photos the parser could not handle.
    pub photos_skipped: usize,
}

impl DissectionReport {
    pub fn interpretable_count(&self) -> usize {
        self.units.iter().filter(|u| u.interpretable).count()
    }

    /// Interpretable units per region.
    pub fn region_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for u in self.units.iter().filter(|u| u.interpretable) {
            if let Some(r) = &u.best_region {
                *m.entry(r.clone()).or_insert(0) += 1;
            }
        }
        m
    }
}

/// Bilinear resize of an `h×w` map to `oh×ow`, sampling at pixel centres
/// with edge clamping.
pub fn upsample_bilinear(map: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let axis = |o: usize, n: usize, on: usize| -> (usize, usize, f64) {
        let src = ((o as f64 + 0.5) * n as f64 / on as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    let cols: Vec<_> = (0..ow).map(|x| axis(x, w, ow)).collect();
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, fy) = axis(y, h, oh);
        for &(x0, x1, fx) in &cols {
            let top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
            let bot = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Native-resolution activations of every layer for one photo.
struct LayerMaps {
    /// layer -> (channels, h, w, values)
    maps: BTreeMap<String, (usize, usize, usize, Vec<f64>)>,
}

fn capture(g: &Generator, photo: &ImageTensor, style: Option<&StyleVector>) -> Result<LayerMaps> {
    let dtype = g.store().dtype();
    let x = photo.to_tensor(dtype, &Device::Cpu)?;
    let s = match (g.config().style_input, style) {
        (true, Some(s)) => Some(style_tensor(&[*s], dtype)?),
        (true, None) => Some(style_tensor(&[StyleVector::basis(0)], dtype)?),
        (false, _) => None,
    };
    let mut maps = BTreeMap::new();
    g.forward_tapped(&x, s.as_ref(), &mut |name, t: &Tensor| {
        let (_, c, h, w) = t.dims4()?;
        let v: Vec<f64> = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        maps.insert(name.to_string(), (c, h, w, v));
        Ok(())
    })?;
    Ok(LayerMaps { maps })
}

fn check_unit(g: &Generator, layer: &str, unit: usize) -> Result<()> {
    let units = g.units();
    match units.iter().find(|(n, _)| n == layer) {
        Some((_, c)) if unit < *c => Ok(()),
        Some((_, c)) => Err(Error::Validation(format!(
            "unit {unit} out of range for layer `{layer}` (0..{c})"
        ))),
        None => Err(Error::Validation(format!(
            "unknown layer `{layer}`; valid layers: {}",
            units
                .iter()
                .map(|(n, c)| format!("{n} (0..{c})"))
                .collect::<Vec<_>>()
                .join(", ")
        ))),
    }
}

fn unit_map_from(maps: &LayerMaps, layer: &str, unit: usize, oh: usize, ow: usize) -> Vec<f64> {
    let (_, h, w, v) = &maps.maps[layer];
    let plane = &v[unit * h * w..(unit + 1) * h * w];
    upsample_bilinear(plane, *h, *w, oh, ow)
}

/// Activation of one unit for photo `p`, upsampled to the photo size.
pub fn unit_feature_map(
    g: &Generator,
    p: &ImageTensor,
    style: Option<&StyleVector>,
    layer: &str,
    unit: usize,
) -> Result<Vec<f64>> {
    check_unit(g, layer, unit)?;
    let maps = capture(g, p, style)?;
    Ok(unit_map_from(&maps, layer, unit, p.height(), p.width()))
}

fn check_pairs(maps: &[Vec<f64>], masks: &[&Mask]) -> Result<()> {
    if maps.len() != masks.len() || maps.is_empty() {
        return Err(Error::Validation(
            "need one mask per map and at least one pair".into(),
        ));
    }
    for (m, k) in maps.iter().zip(masks) {
        if m.len() != k.data().len() {
            return Err(Error::Shape(format!(
                "map has {} pixels, mask has {}",
                m.len(),
                k.data().len()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                term: "feature map".into(),
            });
        }
    }
    Ok(())
}

/// Pooled activations sorted ascending with their mask flags, plus the
/// number of mask pixels strictly above each sorted position.
struct Pooled {
    values: Vec<f64>,
    /// `pos_above[i]` = mask pixels among `values[i..]`.
    pos_above: Vec<usize>,
}

impl Pooled {
    fn new(maps: &[Vec<f64>], masks: &[&Mask]) -> Self {
        let mut pairs: Vec<(f64, bool)> = maps
            .iter()
            .zip(masks)
            .flat_map(|(m, k)| m.iter().copied().zip(k.data().iter().copied()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pos_above = vec![0; pairs.len() + 1];
        for i in (0..pairs.len()).rev() {
            pos_above[i] = pos_above[i + 1] + pairs[i].1 as usize;
        }
        Self {
            values: pairs.into_iter().map(|p| p.0).collect(),
            pos_above,
        }
    }

    fn total(&self) -> usize {
        self.values.len()
    }

    fn mask_area(&self) -> usize {
        self.pos_above[0]
    }

    /// `(|bin|, |bin ∩ mask|)` for `bin = value > t`.
    fn counts_above(&self, t: f64) -> (usize, usize) {
        let i = self.values.partition_point(|&v| v <= t);
        (self.total() - i, self.pos_above[i])
    }
}

/// The candidate thresholds: quantiles at levels `k/65`, `k = 1..=64`, of
/// the pooled activations (linear interpolation between order statistics).
pub fn threshold_candidates(sorted: &[f64]) -> Vec<f64> {
    let n = sorted.len();
    (1..=THRESHOLD_CANDIDATES)
        .map(|k| {
            let pos = k as f64 / (THRESHOLD_CANDIDATES + 1) as f64 * (n - 1) as f64;
            let i = pos.floor() as usize;
            let f = pos - i as f64;
            if f == 0.0 || i + 1 >= n {
                sorted[i]
            } else {
                sorted[i] + f * (sorted[i + 1] - sorted[i])
            }
        })
        .collect()
}

fn entropy_terms(counts: &[usize], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// `I(B; S) / H(B, S)` for binary `B`, `S` given the joint counts
/// `[b∧s, b∧¬s, ¬b∧s, ¬b∧¬s]`; `None` when the joint entropy is zero.
pub fn information_quality(joint: [usize; 4]) -> Option<f64> {
    let total = joint.iter().sum::<usize>() as f64;
    let h = entropy_terms(&joint, total);
    if h <= 0.0 {
        return None;
    }
    let hb = entropy_terms(&[joint[0] + joint[1], joint[2] + joint[3]], total);
    let hs = entropy_terms(&[joint[0] + joint[2], joint[1] + joint[3]], total);
    Some(((hb + hs - h) / h).max(0.0))
}

fn best_threshold(p: &Pooled) -> Option<f64> {
    let (n, area) = (p.total(), p.mask_area());
    if area == 0 || area == n {
        return None;
    }
    let mut best: Option<(f64, f64)> = None;
    for t in threshold_candidates(&p.values) {
        let (above, inter) = p.counts_above(t);
        let joint = [inter, above - inter, area - inter, n - above - (area - inter)];
        if let Some(q) = information_quality(joint) {
            if best.is_none_or(|(_, bq)| q > bq) {
                best = Some((t, q));
            }
        }
    }
    best.map(|(t, _)| t)
}

/// Threshold maximizing `I/H` between the binarized maps and the masks,
/// pooled over all pixels of all images. `None` when every candidate is
/// degenerate (including masks that are all-empty or all-full).
pub fn optimal_threshold(maps: &[Vec<f64>], masks: &[&Mask]) -> Result<Option<f64>> {
    check_pairs(maps, masks)?;
    Ok(best_threshold(&Pooled::new(maps, masks)))
}

fn pooled_iou(p: &Pooled, t: f64) -> f64 {
    let (above, inter) = p.counts_above(t);
    let union = above + p.mask_area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// `Σ|bin ∩ mask| / Σ|bin ∪ mask|` over the set, `bin = map > t`; 0 for an
/// empty union.
pub fn unit_region_iou(maps: &[Vec<f64>], masks: &[&Mask], t: f64) -> Result<f64> {
    check_pairs(maps, masks)?;
    Ok(pooled_iou(&Pooled::new(maps, masks), t))
}

/// Best region, threshold and IoU for one unit's maps.
pub fn score_unit(
    layer: &str,
    unit: usize,
    maps: &[Vec<f64>],
    regions: &BTreeMap<String, Vec<&Mask>>,
) -> Result<UnitReport> {
    let mut best: Option<(String, f64, f64)> = None;
    for (name, masks) in regions {
        check_pairs(maps, masks)?;
        let pooled = Pooled::new(maps, masks);
        let Some(t) = best_threshold(&pooled) else {
            continue;
        };
        let iou = pooled_iou(&pooled, t);
        if best.as_ref().is_none_or(|(_, _, b)| iou > *b) {
            best = Some((name.clone(), t, iou));
        }
    }
    Ok(match best {
        Some((region, t, iou)) => UnitReport {
            layer: layer.to_string(),
            unit,
            best_region: Some(region),
            threshold: Some(t),
            iou,
            interpretable: iou > INTERPRETABLE_IOU,
        },
        None => UnitReport {
            layer: layer.to_string(),
            unit,
            best_region: None,
            threshold: None,
            iou: 0.0,
            interpretable: false,
        },
    })
}

/// Labels every conv unit of `g` with the facial region it best matches over
/// the test photos. Photos the parser rejects are skipped and counted.
pub fn label_units(
    g: &Generator,
    photos: &[(String, ImageTensor)],
    parser: &dyn FaceParser,
    style: Option<&StyleVector>,
) -> Result<DissectionReport> {
    if photos.is_empty() {
        return Err(Error::Validation("dissection needs at least one photo".into()));
    }
    let mut captured = Vec::new();
    let mut parsed = Vec::new();
    let mut skipped = 0;
    for (id, p) in photos {
        match parser.parse(id, p) {
            Ok(m) => {
                captured.push((p.height(), p.width(), capture(g, p, style)?));
                parsed.push(m);
            }
            Err(e) => {
                log::warn!("dissection skips {id}: {e}");
                skipped += 1;
            }
        }
    }
    if captured.is_empty() {
        return Err(Error::Validation(format!(
            "the parser rejected all {skipped} photos"
        )));
    }
    let mut regions: BTreeMap<String, Vec<&Mask>> = BTreeMap::new();
    for name in parser.region_names() {
        let masks: Option<Vec<&Mask>> = parsed.iter().map(|m| m.get(&name)).collect();
        match masks {
            Some(m) => {
                regions.insert(name, m);
            }
            None => log::warn!("region `{name}` missing from some parses; not scored"),
        }
    }
    let mut units = Vec::with_capacity(g.unit_count());
    for (layer, channels) in g.units() {
        for unit in 0..channels {
            let maps: Vec<Vec<f64>> = captured
                .iter()
                .map(|(h, w, m)| unit_map_from(m, &layer, unit, *h, *w))
                .collect();
            units.push(score_unit(&layer, unit, &maps, &regions)?);
        }
    }
    Ok(DissectionReport {
        units,
        photos_used: captured.len(),
        photos_skipped: skipped,
    })
}

/// CSV columns `layer,unit,region,t,iou,interpretable`.
pub fn write_report_csv(path: &Path, report: &DissectionReport) -> Result<()> {
    let err = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["layer", "unit", "region", "t", "iou", "interpretable"])
        .map_err(err)?;
    for u in &report.units {
        w.write_record([
            u.layer.clone(),
            u.unit.to_string(),
            u.best_region.clone().unwrap_or_default(),
            u.threshold.map(|t| t.to_string()).unwrap_or_default(),
            u.iou.to_string(),
            u.interpretable.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// The photo with the outline of `map > t` drawn in yellow.
pub fn overlay(photo: &ImageTensor, map: &[f64], t: f64) -> Result<ImageTensor> {
    let (h, w) = (photo.height(), photo.width());
    if map.len() != h * w {
        return Err(Error::Shape(format!(
            "map has {} pixels, photo is {h}x{w}",
            map.len()
        )));
    }
    let base = if photo.channels() == 3 {
        photo.clone()
    } else {
        let g = photo.channel(0);
        ImageTensor::from_fn(3, h, w, |_, y, x| g[y * w + x])
    };
    let inside = |y: usize, x: usize| map[y * w + x] > t;
    let mut out = base;
    for y in 0..h {
        for x in 0..w {
            if !inside(y, x) {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !inside(y - 1, x)
                || !inside(y + 1, x)
                || !inside(y, x - 1)
                || !inside(y, x + 1);
            if edge {
                out.set(0, y, x, 1.0);
                out.set(1, y, x, 1.0);
                out.set(2, y, x, 0.0);
            }
        }
    }
    Ok(out)
}

/// Writes one overlay PNG per interpretable unit for `photo`, named
/// `<layer>_<unit>_<region>.png`. Returns the number written.
pub fn write_overlays(
    dir: &Path,
    g: &Generator,
    photo: &ImageTensor,
    style: Option<&StyleVector>,
    report: &DissectionReport,
) -> Result<usize> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let maps = capture(g, photo, style)?;
    let mut n = 0;
    for u in report.units.iter().filter(|u| u.interpretable) {
        let (Some(region), Some(t)) = (&u.best_region, u.threshold) else {
            continue;
        };
        let m = unit_map_from(&maps, &u.layer, u.unit, photo.height(), photo.width());
        let img = overlay(photo, &m, t)?;
        img.save_png(dir.join(format!("{}_{}_{region}.png", u.layer, u.unit)))?;
        n += 1;
    }
    Ok(n)
}
