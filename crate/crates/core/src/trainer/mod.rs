//! Training jobs: the style classifier `C`, the quality regressor `M` and
//! the main adversarial model with its epoch schedule, plus checkpoints and
//! the FID / quality evaluation harness.

mod data;
mod fid;
mod heads;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::Rng;
use serde::Serialize;

pub use data::{tag_counts, warp_similarity, Augment, BalancedSampler, Sample, TrainData};
pub use fid::{evaluate_fid, evaluate_quality, frechet_distance, FID_EPS};
pub use heads::{
    classifier_accuracy, train_classifier, train_metric, ClassifierOptions, FitSummary,
    MetricOptions,
};

use crate::backbones::Backbones;
use crate::config::{Ablation, AdvMode, Config};
use crate::corpus::{sample_unpaired_batch, step_rng, Mask, LOCAL_REGIONS};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::{
    adv_loss_drawing, adv_loss_generator, adv_loss_photo, edge_perceptual, loss_weights_from,
    quality_loss, relaxed_cycle_loss, soft_cross_entropy, strict_cycle_loss, truncate6,
    truncation_loss, LossReport, LossTerms, LossWeights,
};
use crate::networks::{
    style_tensor, DrawingDiscriminator, Generator, GeneratorConfig, LocalDiscriminators,
    PatchDiscriminator, QualityRegressor, StyleClassifier, KIND_GENERATOR, KIND_INVERSE,
};
use crate::ops;
use crate::style_vector::StyleVector;

/// Architecture of the adversarial model, hashed into every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GanShape {
    pub base_channels: usize,
    pub n_resblocks: usize,
    pub image_size: usize,
    pub mask_channel: bool,
    pub local_discriminators: bool,
}

impl GanShape {
    pub fn from_config(cfg: &Config) -> Self {
        let a = &cfg.trainer.ablation;
        Self {
            base_channels: cfg.base_channels(),
            n_resblocks: cfg.networks.n_resblocks,
            image_size: cfg.trainer.image_size(),
            mask_channel: a.single_disc_mask_channel,
            local_discriminators: !a.no_local_disc && !a.single_disc_mask_channel,
        }
    }
}

/// Generators `G`, `F` and the discriminators they are trained against.
pub struct GanModels {
    pub shape: GanShape,
    pub g: Generator,
    pub f: Generator,
    pub d_drawing: DrawingDiscriminator,
    pub d_locals: Option<LocalDiscriminators>,
    pub d_photo: PatchDiscriminator,
}

const D_FILES: [&str; 2] = ["d_drawing", "d_photo"];

impl GanModels {
    pub fn new(shape: GanShape, seed: u64, dtype: DType) -> Result<Self> {
        let c = shape.base_channels;
        let g = Generator::new(
            GeneratorConfig::drawing(c, shape.n_resblocks, shape.image_size),
            seed,
            dtype,
        )?;
        let f = Generator::new(
            GeneratorConfig::inverse(c, shape.n_resblocks, shape.image_size),
            seed.wrapping_add(1),
            dtype,
        )?;
        let d_in = if shape.mask_channel { 2 } else { 1 };
        let d_drawing = DrawingDiscriminator::new(d_in, c, seed.wrapping_add(2), dtype)?;
        let d_locals = if shape.local_discriminators {
            Some(LocalDiscriminators::new(c, seed.wrapping_add(3), dtype)?)
        } else {
            None
        };
        let d_photo = PatchDiscriminator::new(3, c, seed.wrapping_add(4), dtype)?;
        Ok(Self {
            shape,
            g,
            f,
            d_drawing,
            d_locals,
            d_photo,
        })
    }

    pub fn generator_vars(&self) -> Vec<Var> {
        let mut v = self.g.store().vars();
        v.extend(self.f.store().vars());
        v
    }

    pub fn discriminator_vars(&self) -> Vec<Var> {
        let mut v = self.d_drawing.store().vars();
        v.extend(self.d_photo.store().vars());
        if let Some(l) = &self.d_locals {
            for (_, n) in &l.nets {
                v.extend(n.store().vars());
            }
        }
        v
    }

    fn stores(&self) -> Vec<(String, &crate::networks::ParamStore, &'static str)> {
        let mut s = vec![
            ("g".to_string(), self.g.store(), KIND_GENERATOR),
            ("f".to_string(), self.f.store(), KIND_INVERSE),
            (D_FILES[0].to_string(), self.d_drawing.store(), "drawing_discriminator"),
            (D_FILES[1].to_string(), self.d_photo.store(), "photo_discriminator"),
        ];
        if let Some(l) = &self.d_locals {
            for (r, n) in &l.nets {
                s.push((format!("d_local_{r}"), n.store(), "local_discriminator"));
            }
        }
        s
    }

    /// One safetensors file per network, each carrying the shape as config.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let shape = serde_json::to_string(&self.shape).expect("shape serializes");
        for (name, store, kind) in self.stores() {
            let cfg = if name == "g" {
                serde_json::to_string(self.g.config()).expect("config serializes")
            } else if name == "f" {
                serde_json::to_string(self.f.config()).expect("config serializes")
            } else {
                shape.clone()
            };
            store.save(&dir.join(format!("{name}.safetensors")), kind, &cfg)?;
        }
        Ok(())
    }

    /// Loads weights saved by [`GanModels::save`] into models of the same
    /// shape; a checkpoint written for another shape is rejected.
    pub fn load(&self, dir: &Path) -> Result<()> {
        let shape = serde_json::to_string(&self.shape).expect("shape serializes");
        for (name, store, kind) in self.stores() {
            let expected = if name == "g" {
                serde_json::to_string(self.g.config()).expect("config serializes")
            } else if name == "f" {
                serde_json::to_string(self.f.config()).expect("config serializes")
            } else {
                shape.clone()
            };
            let path = dir.join(format!("{name}.safetensors"));
            let header = crate::networks::read_checkpoint_header(&path)?;
            if header.config_hash != crate::networks::config_hash(&expected) {
                return Err(Error::Checkpoint(format!(
                    "{} was written for a different model configuration ({}); expected {}",
                    path.display(),
                    header.config,
                    expected
                )));
            }
            store.load(&path, kind)?;
        }
        Ok(())
    }
}

/// Counts of pixel-L1 evaluations per domain, used to check which cycle
/// computes which loss.
#[derive(Debug, Default)]
pub struct WiringProbe {
    photo_l1: AtomicUsize,
    drawing_l1: AtomicUsize,
}

impl WiringProbe {
    pub fn photo_l1(&self) -> usize {
        self.photo_l1.load(Ordering::Relaxed)
    }

    pub fn drawing_l1(&self) -> usize {
        self.drawing_l1.load(Ordering::Relaxed)
    }
}

/// Losses of the photo → drawing → photo cycle.
pub struct ForwardCycle {
    pub fake_drawing: Tensor,
    pub relaxed: Tensor,
    pub trunc: Option<Tensor>,
}

/// Losses of the drawing → photo → drawing cycle.
pub struct BackwardCycle {
    pub fake_photo: Tensor,
    pub strict: Tensor,
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub steps_per_epoch: Option<usize>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub flip: bool,
    pub adv: AdvMode,
    pub quality_start_epoch: usize,
    pub ablation: Ablation,
}

impl TrainOptions {
    pub fn from_config(cfg: &Config) -> Self {
        let t = &cfg.trainer;
        Self {
            epochs: t.epochs(),
            batch: t.batch,
            steps_per_epoch: t.steps_per_epoch,
            lr: t.lr_gan,
            beta1: t.beta1,
            beta2: t.beta2,
            seed: t.seed,
            flip: t.flip,
            adv: cfg.loss.adv,
            quality_start_epoch: cfg.loss.quality_start_epoch,
            ablation: t.ablation.clone(),
        }
    }
}

/// Result of one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Done { d_loss: f64, report: LossReport },
    /// No parameters were updated; `report` holds the raw term values.
    NonFinite { term: String, report: LossReport },
}

/// Mean losses over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub weights: LossWeights,
    pub steps: usize,
    /// Generator-side terms, averaged over steps.
    pub g: LossReport,
    pub d_loss: f64,
    /// Set when a non-finite loss stopped the epoch; `g` then holds the
    /// offending step's values.
    pub aborted: Option<String>,
}

#[derive(Serialize)]
struct StepLog<'a> {
    epoch: usize,
    step: usize,
    weights: &'a LossWeights,
    d_loss: f64,
    g: &'a LossReport,
}

/// Whether every gradient of `vars` in `grads` is finite. A step with a
/// non-finite gradient would poison the weights while the loss still looks
/// fine.
fn grads_finite(grads: &candle_core::backprop::GradStore, vars: &[Var]) -> Result<bool> {
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            let s = g.abs()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !s.is_finite() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Alternating discriminator / generator optimization of the full
/// objective. `C` supplies style codes for real drawings; `M` is frozen.
pub struct GanTrainer {
    pub models: GanModels,
    pub backbones: Backbones,
    pub classifier: StyleClassifier,
    pub metric: Option<QualityRegressor>,
    pub data: TrainData,
    pub opts: TrainOptions,
    /// Style code of every training drawing, from `C`.
    pub drawing_styles: Vec<StyleVector>,
    probe: WiringProbe,
    opt_g: AdamW,
    opt_d: AdamW,
    global_step: u64,
    log: Option<BufWriter<File>>,
}

fn mask_batch(masks: &[&Mask], dtype: DType) -> Result<Tensor> {
    let imgs: Vec<ImageTensor> = masks.iter().map(|m| m.to_image()).collect();
    ImageTensor::stack(&imgs, dtype, &Device::Cpu)
}

fn mean_pixel_l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    strict_cycle_loss(a, b)
}

struct Batch {
    photos: Tensor,
    drawings: Tensor,
    styles: Tensor,
    drawing_styles: Tensor,
    /// Per local region, `N×1×H×W`.
    photo_masks: Vec<Tensor>,
    drawing_masks: Vec<Tensor>,
}

impl GanTrainer {
    pub fn new(
        models: GanModels,
        backbones: Backbones,
        classifier: StyleClassifier,
        metric: Option<QualityRegressor>,
        data: TrainData,
        opts: TrainOptions,
    ) -> Result<Self> {
        if data.image_size() != models.shape.image_size {
            return Err(Error::Shape(format!(
                "data is {}px, models are {}px",
                data.image_size(),
                models.shape.image_size
            )));
        }
        let dtype = models.g.store().dtype();
        let mut drawing_styles = Vec::with_capacity(data.drawings.len());
        for chunk in data.drawings.chunks(16) {
            let imgs: Vec<ImageTensor> = chunk.iter().map(|s| s.image.clone()).collect();
            let p = classifier.probs(&ImageTensor::stack(&imgs, classifier.store().dtype(), &Device::Cpu)?)?;
            let v: Vec<f64> = p.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
            for c in v.chunks(3) {
                let sum: f64 = c.iter().sum();
                drawing_styles.push(StyleVector::relaxed([c[0] / sum, c[1] / sum, c[2] / sum]));
            }
        }
        let adam = |vars, o: &TrainOptions| -> Result<AdamW> {
            Ok(AdamW::new(
                vars,
                ParamsAdamW {
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: 1e-8,
                    weight_decay: 0.0,
                },
            )?)
        };
        let opt_g = adam(models.generator_vars(), &opts)?;
        let opt_d = adam(models.discriminator_vars(), &opts)?;
        let _ = dtype;
        Ok(Self {
            models,
            backbones,
            classifier,
            metric,
            data,
            opts,
            drawing_styles,
            probe: WiringProbe::default(),
            opt_g,
            opt_d,
            global_step: 0,
            log: None,
        })
    }

    /// Appends one JSON line per step to `path`.
    pub fn with_log(mut self, path: &Path) -> Result<Self> {
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        self.log = Some(BufWriter::new(f));
        Ok(self)
    }

    pub fn probe(&self) -> &WiringProbe {
        &self.probe
    }

    fn dtype(&self) -> DType {
        self.models.g.store().dtype()
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.opts.steps_per_epoch.unwrap_or_else(|| {
            let n = self.data.photos.len().max(self.data.drawings.len());
            n.div_ceil(self.opts.batch)
        })
    }

    fn style_input(&self, s: &[StyleVector]) -> Result<Tensor> {
        if self.opts.ablation.no_style_feature {
            Ok(Tensor::zeros((s.len(), 3), self.dtype(), &Device::Cpu)?)
        } else {
            style_tensor(s, self.dtype())
        }
    }

    fn batch(&self) -> Result<Batch> {
        let b = sample_unpaired_batch(
            self.data.photos.len(),
            self.data.drawings.len(),
            &self.drawing_styles,
            self.opts.batch,
            self.opts.seed,
            self.global_step,
        )?;
        let mut rng = step_rng(self.opts.seed ^ 0xf11b, self.global_step);
        let mut pick = |s: &Sample| -> Sample {
            if self.opts.flip && rng.random::<bool>() {
                s.flipped()
            } else {
                s.clone()
            }
        };
        let photos: Vec<Sample> = b.photos.iter().map(|&i| pick(&self.data.photos[i])).collect();
        let drawings: Vec<Sample> = b.drawings.iter().map(|&i| pick(&self.data.drawings[i])).collect();
        let dtype = self.dtype();
        let stack = |v: &[Sample]| -> Result<Tensor> {
            let imgs: Vec<ImageTensor> = v.iter().map(|s| s.image.clone()).collect();
            ImageTensor::stack(&imgs, dtype, &Device::Cpu)
        };
        let masks = |v: &[Sample]| -> Result<Vec<Tensor>> {
            (0..LOCAL_REGIONS.len())
                .map(|r| mask_batch(&v.iter().map(|s| &s.masks[r]).collect::<Vec<_>>(), dtype))
                .collect()
        };
        let ds: Vec<StyleVector> = b.drawings.iter().map(|&i| self.drawing_styles[i]).collect();
        Ok(Batch {
            photos: stack(&photos)?,
            drawings: stack(&drawings)?,
            styles: self.style_input(&b.styles)?,
            drawing_styles: self.style_input(&ds)?,
            photo_masks: masks(&photos)?,
            drawing_masks: masks(&drawings)?,
        })
    }

    fn photo_distance(&self, p: &Tensor, rec: &Tensor) -> Result<Tensor> {
        let a = &self.opts.ablation;
        if a.no_relaxed {
            self.probe.photo_l1.fetch_add(1, Ordering::Relaxed);
            mean_pixel_l1(p, rec)
        } else if a.no_hed {
            Ok(self.backbones.perceptual.distance(p, rec)?.mean(0)?)
        } else {
            relaxed_cycle_loss(&self.backbones, p, rec)
        }
    }

    /// `p → G(p, s) → F(·)`: edge-based relaxed loss plus the truncation
    /// loss; never a pixel loss on photos unless the relaxed term is
    /// ablated.
    pub fn forward_cycle(&self, p: &Tensor, s: &Tensor) -> Result<ForwardCycle> {
        let fake = self.models.g.forward(p, Some(s))?;
        let rec = self.models.f.forward(&fake, None)?;
        let relaxed = self.photo_distance(p, &rec)?;
        let trunc = if self.opts.ablation.no_truncation_loss {
            None
        } else if self.opts.ablation.no_hed || self.opts.ablation.no_relaxed {
            let rec_t = self.models.f.forward(&truncate6(&fake)?, None)?;
            Some(self.photo_distance(p, &rec_t)?)
        } else {
            Some(truncation_loss(&self.backbones, p, &fake, &self.models.f)?)
        };
        Ok(ForwardCycle {
            fake_drawing: fake,
            relaxed,
            trunc,
        })
    }

    /// `d → F(d) → G(·, s_d)`: strict pixel L1 on drawings only.
    pub fn backward_cycle(&self, d: &Tensor, s_d: &Tensor) -> Result<BackwardCycle> {
        let fake = self.models.f.forward(d, None)?;
        let rec = self.models.g.forward(&fake, Some(s_d))?;
        self.probe.drawing_l1.fetch_add(1, Ordering::Relaxed);
        let strict = mean_pixel_l1(d, &rec)?;
        Ok(BackwardCycle {
            fake_photo: fake,
            strict,
        })
    }

    fn drawing_input(&self, d: &Tensor, masks: &[Tensor]) -> Result<Tensor> {
        if !self.models.shape.mask_channel {
            return Ok(d.clone());
        }
        let mut union = masks[0].clone();
        for m in &masks[1..] {
            union = union.maximum(m)?;
        }
        Ok(Tensor::cat(&[d, &union], 1)?)
    }

    fn local_logits(&self, d: &Tensor, masks: &[Tensor]) -> Result<Vec<Option<Tensor>>> {
        match &self.models.d_locals {
            None => Ok(Vec::new()),
            Some(l) => LOCAL_REGIONS
                .iter()
                .zip(masks)
                .map(|(r, m)| l.discriminate(r, d, m))
                .collect(),
        }
    }

    fn discriminator_step(&mut self, b: &Batch) -> Result<f64> {
        let fake_d = self.models.g.forward(&b.photos, Some(&b.styles))?.detach();
        let fake_p = self.models.f.forward(&b.drawings, None)?.detach();
        let real_out = self
            .models
            .d_drawing
            .forward(&self.drawing_input(&b.drawings, &b.drawing_masks)?)?;
        let fake_out = self
            .models
            .d_drawing
            .forward(&self.drawing_input(&fake_d, &b.photo_masks)?)?;
        let mut reals = vec![real_out.rf_map.clone()];
        let mut fakes = vec![fake_out.rf_map.clone()];
        let lr = self.local_logits(&b.drawings, &b.drawing_masks)?;
        let lf = self.local_logits(&fake_d, &b.photo_masks)?;
        for (r, f) in lr.into_iter().zip(lf) {
            if let (Some(r), Some(f)) = (r, f) {
                reals.push(r);
                fakes.push(f);
            }
        }
        let mut loss = adv_loss_drawing(&reals, &fakes, self.opts.adv)?;
        let photo_real = self.models.d_photo.forward(&b.photos)?;
        let photo_fake = self.models.d_photo.forward(&fake_p)?;
        loss = (loss + adv_loss_photo(&photo_real, &photo_fake, self.opts.adv)?)?;
        if !self.opts.ablation.no_style_feature {
            let probs = real_out.cls_probs()?.expect("drawing discriminator classifies");
            loss = (loss + soft_cross_entropy(&b.drawing_styles, &probs)?)?;
        }
        let v = ops::scalar(&loss)?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: "discriminator".into(),
            });
        }
        let grads = loss.backward()?;
        if !grads_finite(&grads, &self.models.discriminator_vars())? {
            return Err(Error::NonFinite {
                term: "discriminator gradient".into(),
            });
        }
        self.opt_d.step(&grads)?;
        Ok(v)
    }

    fn generator_terms(&self, b: &Batch, w: &LossWeights) -> Result<LossTerms> {
        let fwd = self.forward_cycle(&b.photos, &b.styles)?;
        let bwd = self.backward_cycle(&b.drawings, &b.drawing_styles)?;
        let out = self
            .models
            .d_drawing
            .forward(&self.drawing_input(&fwd.fake_drawing, &b.photo_masks)?)?;
        let mut fakes = vec![out.rf_map.clone()];
        fakes.extend(self.local_logits(&fwd.fake_drawing, &b.photo_masks)?.into_iter().flatten());
        let adv_drawing = adv_loss_generator(&fakes, self.opts.adv)?;
        let adv_photo =
            adv_loss_generator(&[self.models.d_photo.forward(&bwd.fake_photo)?], self.opts.adv)?;
        let style = if self.opts.ablation.no_style_feature {
            None
        } else {
            let probs = out.cls_probs()?.expect("drawing discriminator classifies");
            Some(soft_cross_entropy(&b.styles, &probs)?)
        };
        let quality = match &self.metric {
            Some(m) if w.lambda5 > 0.0 && !self.opts.ablation.no_quality_loss => {
                Some(quality_loss(&m.forward(&fwd.fake_drawing)?)?)
            }
            _ => None,
        };
        Ok(LossTerms {
            adv_drawing: Some(adv_drawing),
            adv_photo: Some(adv_photo),
            relaxed_cyc: Some(fwd.relaxed),
            strict_cyc: Some(bwd.strict),
            trunc: fwd.trunc,
            style,
            quality,
        })
    }

    fn raw_report(terms: &LossTerms) -> LossReport {
        let v = |t: &Option<Tensor>| t.as_ref().map_or(0.0, |t| ops::scalar(t).unwrap_or(f64::NAN));
        let mut r = LossReport {
            adv_drawing: v(&terms.adv_drawing),
            adv_photo: v(&terms.adv_photo),
            relaxed_cyc: v(&terms.relaxed_cyc),
            strict_cyc: v(&terms.strict_cyc),
            trunc: v(&terms.trunc),
            style: v(&terms.style),
            quality: v(&terms.quality),
            total: 0.0,
        };
        r.total = r.values()[..7].iter().sum();
        r
    }

    /// One discriminator step then one generator step.
    pub fn train_step(&mut self, w: &LossWeights) -> Result<StepOutcome> {
        let b = self.batch()?;
        let d_loss = match self.discriminator_step(&b) {
            Ok(v) => v,
            Err(Error::NonFinite { term }) => {
                return Ok(StepOutcome::NonFinite {
                    term,
                    report: LossReport::default(),
                })
            }
            Err(e) => return Err(e),
        };
        let terms = self.generator_terms(&b, w)?;
        let (total, report) = match terms.total(w) {
            Ok(x) => x,
            Err(Error::NonFinite { term }) => {
                return Ok(StepOutcome::NonFinite {
                    term,
                    report: Self::raw_report(&terms),
                })
            }
            Err(e) => return Err(e),
        };
        let grads = total.backward()?;
        if !grads_finite(&grads, &self.models.generator_vars())? {
            return Ok(StepOutcome::NonFinite {
                term: "generator gradient".into(),
                report,
            });
        }
        self.opt_g.step(&grads)?;
        self.global_step += 1;
        Ok(StepOutcome::Done { d_loss, report })
    }

    /// Runs epoch `i` (1-indexed) with `loss_weights(i, N)`.
    pub fn train_epoch(&mut self, i: usize) -> Result<EpochReport> {
        let w = loss_weights_from(i, self.opts.epochs, self.opts.quality_start_epoch)?;
        let steps = self.steps_per_epoch();
        let mut sum = [0.0f64; 8];
        let mut d_sum = 0.0;
        for step in 0..steps {
            match self.train_step(&w)? {
                StepOutcome::Done { d_loss: d, report: r } => {
                    for (acc, v) in sum.iter_mut().zip(r.values()) {
                        *acc += v;
                    }
                    d_sum += d;
                    if let Some(log) = &mut self.log {
                        let line = serde_json::to_string(&StepLog {
                            epoch: i,
                            step,
                            weights: &w,
                            d_loss: d,
                            g: &r,
                        })
                        .expect("log line serializes");
                        writeln!(log, "{line}").map_err(|e| Error::io("training log", e))?;
                    }
                }
                StepOutcome::NonFinite { term, report } => {
                    log::error!("epoch {i} step {step}: non-finite {term}; {report:?}");
                    return Ok(EpochReport {
                        epoch: i,
                        weights: w,
                        steps: step,
                        g: report,
                        d_loss: d_sum / step.max(1) as f64,
                        aborted: Some(format!("non-finite {term} at step {step}")),
                    });
                }
            }
        }
        if let Some(log) = &mut self.log {
            log.flush().map_err(|e| Error::io("training log", e))?;
        }
        let n = steps.max(1) as f64;
        let g = LossReport {
            adv_drawing: sum[0] / n,
            adv_photo: sum[1] / n,
            relaxed_cyc: sum[2] / n,
            strict_cyc: sum[3] / n,
            trunc: sum[4] / n,
            style: sum[5] / n,
            quality: sum[6] / n,
            total: sum[7] / n,
        };
        Ok(EpochReport {
            epoch: i,
            weights: w,
            steps,
            g,
            d_loss: d_sum / n,
            aborted: None,
        })
    }

    /// All epochs in order; stops at the first aborted epoch.
    pub fn train(&mut self, checkpoint_dir: Option<&Path>) -> Result<Vec<EpochReport>> {
        let mut reports = Vec::new();
        for i in 1..=self.opts.epochs {
            let r = self.train_epoch(i)?;
            log::info!("epoch {i}/{}: d={:.4} {}", self.opts.epochs, r.d_loss, r.g);
            let stop = r.aborted.is_some();
            reports.push(r);
            if stop {
                break;
            }
            if let Some(dir) = checkpoint_dir {
                self.models.save(dir)?;
            }
        }
        Ok(reports)
    }

    /// Drawings for `photos` in style `s`.
    pub fn generate(&self, photos: &[ImageTensor], s: &StyleVector) -> Result<Vec<ImageTensor>> {
        let mut out = Vec::with_capacity(photos.len());
        for chunk in photos.chunks(8) {
            let x = ImageTensor::stack(chunk, self.dtype(), &Device::Cpu)?;
            let st = self.style_input(&vec![*s; chunk.len()])?;
            out.extend(ImageTensor::unstack(&self.models.g.forward(&x, Some(&st))?.clamp(0.0, 1.0)?)?);
        }
        Ok(out)
    }
}

/// Relaxed-cycle edge distance between two photo batches; exposed for the
/// evaluation CLI.
pub fn photo_edge_distance(bb: &Backbones, a: &Tensor, b: &Tensor) -> Result<f64> {
    ops::scalar(&edge_perceptual(bb, a, b)?)
}

/// Default checkpoint layout inside an output directory.
pub fn checkpoint_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}
