//! Loss terms of the training objective, the 6-bit truncation operator and
//! the epoch schedule of their weights.

use std::fmt;

use candle_core::{DType, Device, Tensor};
use serde::Serialize;

use crate::backbones::Backbones;
use crate::config::AdvMode;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::networks::Generator;
use crate::ops;

pub const TRUNCATION_LEVELS: f64 = 64.0;
const TRUNCATION_EPS: f64 = 1e-6;
const LOG_CLAMP: f64 = 1e-12;
pub const DEFAULT_QUALITY_START: usize = 100;

fn mean_scalar(t: &Tensor) -> Result<Tensor> {
    Ok(t.flatten_all()?.mean(0)?)
}

fn check_nonempty(logits: &Tensor, what: &str) -> Result<()> {
    if logits.elem_count() == 0 || logits.dim(0)? == 0 {
        return Err(Error::Validation(format!("{what}: empty batch")));
    }
    Ok(())
}

/// Mean per-patch loss pushing `logits` toward real (`true`) or fake.
/// The log form is binary cross-entropy on logits; the least-squares form
/// regresses raw outputs onto 1 or 0.
pub fn adv_term(logits: &Tensor, real: bool, mode: AdvMode) -> Result<Tensor> {
    check_nonempty(logits, "adversarial loss")?;
    match mode {
        AdvMode::Log => {
            let x = if real { logits.neg()? } else { logits.clone() };
            mean_scalar(&ops::softplus(&x)?)
        }
        AdvMode::Lsgan => {
            let target = if real { 1.0 } else { 0.0 };
            mean_scalar(&(logits - target)?.sqr()?)
        }
    }
}

/// Discriminator side of the objective, summed over discriminators:
/// `Σ_D [−log D(real) − log(1 − D(fake))]`. A discriminator at 0.5
/// everywhere scores `2·ln 2`; a perfect one scores 0.
pub fn adv_loss_discriminator(
    real_logits: &[Tensor],
    fake_logits: &[Tensor],
    mode: AdvMode,
) -> Result<Tensor> {
    if real_logits.is_empty() || real_logits.len() != fake_logits.len() {
        return Err(Error::Validation(
            "adversarial loss needs matching, non-empty real and fake outputs".into(),
        ));
    }
    let mut total = None::<Tensor>;
    for (r, f) in real_logits.iter().zip(fake_logits) {
        let t = (adv_term(r, true, mode)? + adv_term(f, false, mode)?)?;
        total = Some(match total {
            Some(acc) => (acc + t)?,
            None => t,
        });
    }
    Ok(total.expect("non-empty"))
}

/// Generator side, non-saturating: `Σ_D −log D(fake)`.
pub fn adv_loss_generator(fake_logits: &[Tensor], mode: AdvMode) -> Result<Tensor> {
    if fake_logits.is_empty() {
        return Err(Error::Validation("adversarial loss: no discriminators".into()));
    }
    let mut total = adv_term(&fake_logits[0], true, mode)?;
    for f in &fake_logits[1..] {
        total = (total + adv_term(f, true, mode)?)?;
    }
    Ok(total)
}

/// Drawing-domain adversarial loss over the global and local discriminators.
pub fn adv_loss_drawing(
    real_logits: &[Tensor],
    fake_logits: &[Tensor],
    mode: AdvMode,
) -> Result<Tensor> {
    adv_loss_discriminator(real_logits, fake_logits, mode)
}

/// Photo-domain adversarial loss for the single photo discriminator.
pub fn adv_loss_photo(real_logits: &Tensor, fake_logits: &Tensor, mode: AdvMode) -> Result<Tensor> {
    adv_loss_discriminator(
        std::slice::from_ref(real_logits),
        std::slice::from_ref(fake_logits),
        mode,
    )
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Batch mean of the perceptual distance between edge maps.
pub fn edge_perceptual(bb: &Backbones, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let ea = bb.edges.extract(a)?;
    let eb = bb.edges.extract(b)?;
    mean_scalar(&bb.perceptual.distance(&ea, &eb)?)
}

/// Photo cycle: compares edge content only, so the reconstruction is free
/// to differ in shading and colour.
pub fn relaxed_cycle_loss(bb: &Backbones, p: &Tensor, p_rec: &Tensor) -> Result<Tensor> {
    check_same(p, p_rec, "relaxed cycle loss")?;
    edge_perceptual(bb, p, p_rec)
}

/// Drawing cycle: mean absolute pixel error.
pub fn strict_cycle_loss(d: &Tensor, d_rec: &Tensor) -> Result<Tensor> {
    check_same(d, d_rec, "strict cycle loss")?;
    let d_rec = ops::match_dtype(d_rec, d.dtype())?;
    mean_scalar(&d.sub(&d_rec)?.abs()?)
}

/// Quantizes `[0,1]` values to 64 levels `k/64`, with a straight-through
/// gradient.
pub fn truncate6(x: &Tensor) -> Result<Tensor> {
    let q = (x
        .clamp(0.0, 1.0 - TRUNCATION_EPS)?
        .affine(TRUNCATION_LEVELS, 0.0)?
        .floor()?
        / TRUNCATION_LEVELS)?;
    Ok((x + q.sub(x)?.detach())?)
}

pub fn truncate6_value(x: f64) -> f64 {
    (x.clamp(0.0, 1.0 - TRUNCATION_EPS) * TRUNCATION_LEVELS).floor() / TRUNCATION_LEVELS
}

pub fn truncate6_image(img: &ImageTensor) -> ImageTensor {
    let data = img
        .data()
        .iter()
        .map(|&v| truncate6_value(v as f64) as f32)
        .collect();
    ImageTensor::new(img.channels(), img.height(), img.width(), data).expect("same shape")
}

/// Edge loss between the photo and the reconstruction of its truncated
/// drawing: hidden low-amplitude encodings of the photo cannot survive the
/// quantization.
pub fn truncation_loss(
    bb: &Backbones,
    p: &Tensor,
    fake_drawing: &Tensor,
    f: &Generator,
) -> Result<Tensor> {
    let rec = f.forward(&truncate6(fake_drawing)?, None)?;
    check_same(p, &rec, "truncation loss")?;
    edge_perceptual(bb, p, &rec)
}

/// `mean_n −Σ_c target·log(max(pred, 1e-12))`.
pub fn soft_cross_entropy(target: &Tensor, pred: &Tensor) -> Result<Tensor> {
    check_same(target, pred, "style classification loss")?;
    check_nonempty(pred, "style classification loss")?;
    let pred = ops::match_dtype(pred, target.dtype())?;
    let logp = pred.maximum(LOG_CLAMP)?.log()?;
    Ok(target.mul(&logp)?.sum(1)?.neg()?.mean(0)?)
}

/// The two soft cross-entropy terms of the style objective: real drawings
/// against their classifier probabilities, fakes against the style code
/// they were generated with.
pub fn style_classification_loss(
    real_targets: &Tensor,
    real_pred: &Tensor,
    fake_targets: &Tensor,
    fake_pred: &Tensor,
) -> Result<(Tensor, Tensor)> {
    Ok((
        soft_cross_entropy(real_targets, real_pred)?,
        soft_cross_entropy(fake_targets, fake_pred)?,
    ))
}

/// `mean(1 − M(fake))` from quality scores.
pub fn quality_loss(scores: &Tensor) -> Result<Tensor> {
    check_nonempty(scores, "quality loss")?;
    mean_scalar(&scores.affine(-1.0, 1.0)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub epoch: usize,
    pub total_epochs: usize,
}

/// Weights at 1-indexed epoch `i` of `n`, the quality term switching on
/// strictly after epoch 100.
pub fn loss_weights(i: usize, n: usize) -> Result<LossWeights> {
    loss_weights_from(i, n, DEFAULT_QUALITY_START)
}

/// As [`loss_weights`] with the quality term starting after `quality_start`.
pub fn loss_weights_from(i: usize, n: usize, quality_start: usize) -> Result<LossWeights> {
    if n == 0 || i == 0 || i > n {
        return Err(Error::Validation(format!(
            "epoch {i} outside 1..={n}"
        )));
    }
    let ramp = 4.5 * i as f64 / n as f64;
    Ok(LossWeights {
        lambda1: 5.0 - ramp,
        lambda2: 5.0,
        lambda3: ramp,
        lambda4: 1.0,
        lambda5: if i > quality_start { 0.5 } else { 0.0 },
        epoch: i,
        total_epochs: n,
    })
}

/// One value per term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub adv_drawing: f64,
    pub adv_photo: f64,
    pub relaxed_cyc: f64,
    pub strict_cyc: f64,
    pub trunc: f64,
    pub style: f64,
    pub quality: f64,
    pub total: f64,
}

impl LossReport {
    pub const TERMS: [&'static str; 8] = [
        "adv_drawing",
        "adv_photo",
        "relaxed_cyc",
        "strict_cyc",
        "trunc",
        "style",
        "quality",
        "total",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.adv_drawing,
            self.adv_photo,
            self.relaxed_cyc,
            self.strict_cyc,
            self.trunc,
            self.style,
            self.quality,
            self.total,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in Self::TERMS.iter().zip(self.values()).enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{k}={v:.6}")?;
        }
        Ok(())
    }
}

/// Scalar loss tensors for one generator step. Disabled terms stay `None`
/// and count as zero.
#[derive(Clone, Debug, Default)]
pub struct LossTerms {
    pub adv_drawing: Option<Tensor>,
    pub adv_photo: Option<Tensor>,
    pub relaxed_cyc: Option<Tensor>,
    pub strict_cyc: Option<Tensor>,
    pub trunc: Option<Tensor>,
    pub style: Option<Tensor>,
    pub quality: Option<Tensor>,
}

impl LossTerms {
    fn weighted(&self, w: &LossWeights) -> [(&'static str, Option<&Tensor>, f64); 7] {
        [
            ("adv_drawing", self.adv_drawing.as_ref(), 1.0),
            ("adv_photo", self.adv_photo.as_ref(), 1.0),
            ("relaxed_cyc", self.relaxed_cyc.as_ref(), w.lambda1),
            ("strict_cyc", self.strict_cyc.as_ref(), w.lambda2),
            ("trunc", self.trunc.as_ref(), w.lambda3),
            ("style", self.style.as_ref(), w.lambda4),
            ("quality", self.quality.as_ref(), w.lambda5),
        ]
    }

    /// Weighted sum for backpropagation plus the per-term report. Any
    /// non-finite term is an error naming it.
    pub fn total(&self, w: &LossWeights) -> Result<(Tensor, LossReport)> {
        let mut vals = [0.0f64; 7];
        let mut sum: Option<Tensor> = None;
        for (k, (name, t, lambda)) in self.weighted(w).into_iter().enumerate() {
            let Some(t) = t else { continue };
            let v = ops::scalar(t)?;
            if !v.is_finite() {
                return Err(Error::NonFinite { term: name.into() });
            }
            vals[k] = v;
            if lambda != 0.0 {
                let wt = (t * lambda)?;
                sum = Some(match sum {
                    Some(s) => (s + wt)?,
                    None => wt,
                });
            }
        }
        let report = total_loss(
            &LossReport {
                adv_drawing: vals[0],
                adv_photo: vals[1],
                relaxed_cyc: vals[2],
                strict_cyc: vals[3],
                trunc: vals[4],
                style: vals[5],
                quality: vals[6],
                total: 0.0,
            },
            w,
        )?;
        let sum = match sum {
            Some(s) => s,
            None => Tensor::zeros((), DType::F64, &Device::Cpu)?,
        };
        Ok((sum, report))
    }
}

/// Fills in `total` for scalar term values.
pub fn total_loss(terms: &LossReport, w: &LossWeights) -> Result<LossReport> {
    let named = [
        ("adv_drawing", terms.adv_drawing),
        ("adv_photo", terms.adv_photo),
        ("relaxed_cyc", terms.relaxed_cyc),
        ("strict_cyc", terms.strict_cyc),
        ("trunc", terms.trunc),
        ("style", terms.style),
        ("quality", terms.quality),
    ];
    for (name, v) in named {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: name.into() });
        }
    }
    let total = terms.adv_drawing
        + terms.adv_photo
        + w.lambda1 * terms.relaxed_cyc
        + w.lambda2 * terms.strict_cyc
        + w.lambda3 * terms.trunc
        + w.lambda4 * terms.style
        + w.lambda5 * terms.quality;
    Ok(LossReport { total, ..*terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate6_value(0.0), 0.0);
        assert_eq!(truncate6_value(0.5), 0.5);
        assert_eq!(truncate6_value(0.01), 0.0);
        assert_eq!(truncate6_value(1.0), 63.0 / 64.0);
    }

    #[test]
    fn weighted_sum_of_unit_terms() {
        let w = loss_weights(300, 300).unwrap();
        let ones = LossReport {
            adv_drawing: 1.0,
            adv_photo: 1.0,
            relaxed_cyc: 1.0,
            strict_cyc: 1.0,
            trunc: 1.0,
            style: 1.0,
            quality: 1.0,
            total: 0.0,
        };
        assert_eq!(total_loss(&ones, &w).unwrap().total, 13.5);
        assert_eq!(total_loss(&LossReport::default(), &w).unwrap().total, 0.0);
        let bad = LossReport {
            trunc: f64::NAN,
            ..ones
        };
        let err = total_loss(&bad, &w).unwrap_err();
        assert!(err.to_string().contains("trunc"));
    }
}
