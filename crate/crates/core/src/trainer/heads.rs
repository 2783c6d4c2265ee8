use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{Augment, BalancedSampler};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::soft_cross_entropy;
use crate::networks::{QualityRegressor, StyleClassifier};
use crate::ops;

fn adam(vars: Vec<candle_core::Var>, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?)
}

#[derive(Clone, Debug)]
pub struct ClassifierOptions {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// `None` disables augmentation.
    pub augment: Option<Augment>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub losses: Vec<f64>,
    /// Accuracy (classifier) or mean squared error (metric) on the
    /// un-augmented training set after the last step.
    pub final_metric: f64,
}

/// Fraction of drawings whose arg-max class equals the label.
pub fn classifier_accuracy(c: &StyleClassifier, data: &[(ImageTensor, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Validation("accuracy on an empty set".into()));
    }
    let mut correct = 0;
    for chunk in data.chunks(16) {
        let imgs: Vec<ImageTensor> = chunk.iter().map(|(i, _)| i.clone()).collect();
        let x = ImageTensor::stack(&imgs, c.store().dtype(), &Device::Cpu)?;
        let pred: Vec<u32> = c.logits(&x)?.argmax(1)?.to_vec1()?;
        correct += pred
            .iter()
            .zip(chunk)
            .filter(|(p, (_, l))| **p as usize == *l)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains `C` on tagged drawings with class-balanced sampling and random
/// rotation, translation and scaling.
pub fn train_classifier(
    c: &StyleClassifier,
    data: &[(ImageTensor, usize)],
    opts: &ClassifierOptions,
) -> Result<FitSummary> {
    let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
    let sampler = BalancedSampler::new(&labels, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut opt = adam(c.store().vars(), opts.lr)?;
    let dtype = c.store().dtype();
    let mut losses = Vec::with_capacity(opts.steps);
    for _ in 0..opts.steps {
        let mut imgs = Vec::with_capacity(opts.batch);
        let mut targets = Vec::with_capacity(opts.batch * 3);
        for _ in 0..opts.batch {
            let (img, l) = &data[sampler.sample(&mut rng)];
            imgs.push(match &opts.augment {
                Some(a) => a.apply(img, &mut rng, 1.0),
                None => img.clone(),
            });
            targets.extend((0..3).map(|k| (k == *l) as u8 as f64));
        }
        let x = ImageTensor::stack(&imgs, dtype, &Device::Cpu)?;
        let t = Tensor::from_vec(targets, (opts.batch, 3), &Device::Cpu)?.to_dtype(dtype)?;
        let loss = soft_cross_entropy(&t, &c.probs(&x)?)?;
        let v = ops::scalar(&loss)?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: "classifier".into(),
            });
        }
        losses.push(v);
        opt.backward_step(&loss)?;
    }
    Ok(FitSummary {
        losses,
        final_metric: classifier_accuracy(c, data)?,
    })
}

#[derive(Clone, Debug)]
pub struct MetricOptions {
    pub steps: usize,
    /// `0` means full batch.
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

fn metric_mse(m: &QualityRegressor, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    Ok(m.forward(x)?.sub(y)?.sqr()?.mean(0)?)
}

/// Regresses `M` onto normalized preference scores in `[0.1, 1]`.
pub fn train_metric(
    m: &QualityRegressor,
    rows: &[(ImageTensor, f64)],
    opts: &MetricOptions,
) -> Result<FitSummary> {
    if rows.is_empty() {
        return Err(Error::Validation("metric dataset is empty".into()));
    }
    if let Some((_, s)) = rows.iter().find(|(_, s)| !(0.1..=1.0).contains(s)) {
        return Err(Error::Validation(format!("score {s} outside [0.1, 1]")));
    }
    let dtype = m.store().dtype();
    let all_x = ImageTensor::stack(
        &rows.iter().map(|(i, _)| i.clone()).collect::<Vec<_>>(),
        dtype,
        &Device::Cpu,
    )?;
    let all_y = Tensor::from_vec(
        rows.iter().map(|(_, s)| *s).collect::<Vec<_>>(),
        rows.len(),
        &Device::Cpu,
    )?
    .to_dtype(dtype)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut opt = adam(m.store().vars(), opts.lr)?;
    let mut losses = Vec::with_capacity(opts.steps);
    for _ in 0..opts.steps {
        let loss = if opts.batch == 0 || opts.batch >= rows.len() {
            metric_mse(m, &all_x, &all_y)?
        } else {
            let idx: Vec<u32> = rand::seq::index::sample(&mut rng, rows.len(), opts.batch)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            let idx = Tensor::new(idx.as_slice(), &Device::Cpu)?;
            metric_mse(m, &all_x.index_select(&idx, 0)?, &all_y.index_select(&idx, 0)?)?
        };
        let v = ops::scalar(&loss)?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: "metric".into(),
            });
        }
        losses.push(v);
        opt.backward_step(&loss)?;
    }
    let final_metric = ops::scalar(&metric_mse(m, &all_x, &all_y)?)?;
    Ok(FitSummary {
        losses,
        final_metric,
    })
}

