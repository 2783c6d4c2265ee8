//! Style-space utilities: interpolation between style codes, the
//! histogram-matching style loss and search for the style code that best
//! reproduces an unseen reference drawing.

use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbones::{Backbones, FeatureStack};
use crate::error::{Error, Result};
use crate::networks::Generator;
use crate::ops;
use crate::style_vector::StyleVector;

/// `(1−t)·a + t·b`.
pub fn interpolate_styles(a: &StyleVector, b: &StyleVector, t: f64) -> Result<StyleVector> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Validation(format!("interpolation t={t} outside [0, 1]")));
    }
    let (va, vb) = (a.values(), b.values());
    let v = [0, 1, 2].map(|i| (1.0 - t) * va[i] + t * vb[i]);
    if a.is_relaxed() || b.is_relaxed() {
        Ok(StyleVector::relaxed(v))
    } else {
        StyleVector::new(v)
    }
}

/// Linear interpolation into sorted values at fractional index `pos`.
fn quantile_at(sorted: &[f64], pos: f64) -> f64 {
    let last = sorted.len() - 1;
    let pos = pos.clamp(0.0, last as f64);
    let i = pos.floor() as usize;
    if i >= last {
        return sorted[last];
    }
    let f = pos - i as f64;
    if f == 0.0 {
        sorted[i]
    } else {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    }
}

/// Monotone CDF matching of `source` onto the distribution of `target`.
///
/// Each source value is sent to the target quantile at its mid-rank, so
/// equal-sized inputs map rank-for-rank onto the sorted target, ties stay
/// tied, and a constant target maps everything to that constant. `bins` is
/// the resolution the result is compared at; it must be at least 2.
pub fn histogram_remap(source: &[f64], target: &[f64], bins: usize) -> Result<Vec<f64>> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Validation("histogram remap needs non-empty inputs".into()));
    }
    if bins < 2 {
        return Err(Error::Validation(format!("bins must be >= 2, got {bins}")));
    }
    if source.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::Validation("histogram remap on non-finite values".into()));
    }
    let mut t = target.to_vec();
    t.sort_by(|a, b| a.total_cmp(b));
    let n = source.len();
    let scale = t.len() as f64 / n as f64;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| source[a].total_cmp(&source[b]));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let v = source[order[start]];
        let mut end = start + 1;
        while end < n && source[order[end]] == v {
            end += 1;
        }
        let k = (end - start) as f64;
        let pos = (start as f64 + 0.5 * k) * scale - 0.5;
        let mapped = quantile_at(&t, pos);
        for &i in &order[start..end] {
            out[i] = mapped;
        }
        start = end;
    }
    Ok(out)
}

/// Normalized histogram over `[lo, hi]`; values outside are clamped into the
/// end bins.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = if width > 0.0 {
            (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        h[b] += 1.0;
    }
    let n = values.len().max(1) as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

/// Σ over bins of `|h_a − h_b|`, both histograms taken over the joint range.
pub fn histogram_l1(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    let ha = histogram(a, bins, lo, hi);
    let hb = histogram(b, bins, lo, hi);
    ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum()
}

/// Per-channel remap targets of `a` toward `b`, detached. `b` may have batch
/// 1 (shared target) or the same batch as `a`.
pub fn histogram_targets(a: &FeatureStack, b: &FeatureStack, bins: usize) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(FeatureStack::LEVELS);
    for (la, lb) in a.activations().iter().zip(b.activations()) {
        let (na, ca, ha, wa) = la.dims4()?;
        let (nb, cb, hb, wb) = lb.dims4()?;
        if ca != cb || (nb != 1 && nb != na) {
            return Err(Error::Shape(format!(
                "feature stacks differ: {:?} vs {:?}",
                la.dims(),
                lb.dims()
            )));
        }
        let va: Vec<f64> = la.detach().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let vb: Vec<f64> = lb.detach().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let (sa, sb) = (ha * wa, hb * wb);
        let mut r = Vec::with_capacity(va.len());
        for n in 0..na {
            let nb_i = if nb == 1 { 0 } else { n };
            for c in 0..ca {
                let src = &va[(n * ca + c) * sa..(n * ca + c + 1) * sa];
                let tgt = &vb[(nb_i * cb + c) * sb..(nb_i * cb + c + 1) * sb];
                r.extend(histogram_remap(src, tgt, bins)?);
            }
        }
        out.push(Tensor::from_vec(r, la.dims(), &Device::Cpu)?.to_dtype(la.dtype())?);
    }
    Ok(out)
}

/// `Σ_layers mean((O_i(A) − R_i)²)` against fixed targets.
pub fn histogram_loss_with_targets(a: &FeatureStack, targets: &[Tensor]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (la, r) in a.activations().iter().zip(targets) {
        let term = la.sub(r)?.sqr()?.flatten_all()?.mean(0)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Shape("empty feature stack".into()))
}

pub fn histogram_style_loss_stacks(a: &FeatureStack, b: &FeatureStack, bins: usize) -> Result<Tensor> {
    let targets = histogram_targets(a, b, bins)?;
    histogram_loss_with_targets(a, &targets)
}

/// Histogram style distance of drawing batch `a` to reference `b`.
/// Gradients flow through `a`'s activations only.
pub fn histogram_style_loss(bb: &Backbones, a: &Tensor, b: &Tensor, bins: usize) -> Result<Tensor> {
    let fa = bb.features.features(a)?;
    let fb = bb.features.features(&b.detach())?;
    histogram_style_loss_stacks(&fa, &fb, bins)
}

#[derive(Clone, Debug)]
pub struct SearchConfig {
    pub steps: usize,
    pub lr: f64,
    pub bins: usize,
    pub project_simplex: bool,
    pub seed: u64,
    /// Starting code; random on the simplex when `None`.
    pub init: Option<StyleVector>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.05,
            bins: 256,
            project_simplex: false,
            seed: 0,
            init: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    pub step: usize,
    pub s: [f64; 3],
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct StyleSearchState {
    /// Best code found.
    pub s: StyleVector,
    pub loss: f64,
    pub step: usize,
    pub trace: Vec<TracePoint>,
    /// Set when the search stopped on a non-finite loss.
    pub aborted: Option<String>,
}

/// Uniform components divided by their sum.
pub fn random_style(rng: &mut impl Rng) -> StyleVector {
    let v: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let s: f64 = v.iter().sum::<f64>().max(1e-12);
    StyleVector::relaxed([v[0] / s, v[1] / s, v[2] / s])
}

/// Adam on the style code alone, minimizing the histogram style loss between
/// `G(p, s)` and `d_target`. Every evaluated code is traced; the best one is
/// returned.
pub fn search_new_style(
    g: &Generator,
    bb: &Backbones,
    p: &Tensor,
    d_target: &Tensor,
    cfg: &SearchConfig,
) -> Result<StyleSearchState> {
    let dtype = g.store().dtype();
    let n = p.dim(0)?;
    let init = match cfg.init {
        Some(s) => s,
        None => random_style(&mut ChaCha8Rng::seed_from_u64(cfg.seed)),
    };
    let s = Var::from_tensor(&Tensor::new(&[init.values()], &Device::Cpu)?.to_dtype(dtype)?)?;
    let target_feats = bb.features.features(&d_target.detach())?;
    let mut opt = AdamW::new(
        vec![s.clone()],
        ParamsAdamW {
            lr: cfg.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut aborted = None;
    for step in 0..cfg.steps {
        let sv: Vec<f64> = s.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let sb = s.as_tensor().broadcast_as((n, 3))?;
        let out = g.forward(p, Some(&sb))?;
        let feats = bb.features.features(&out)?;
        let loss = histogram_style_loss_stacks(&feats, &target_feats, cfg.bins)?;
        let lv = ops::scalar(&loss)?;
        trace.push(TracePoint {
            step,
            s: [sv[0], sv[1], sv[2]],
            loss: lv,
        });
        if !lv.is_finite() {
            aborted = Some(format!("non-finite loss at step {step}"));
            break;
        }
        opt.backward_step(&loss)?;
        if cfg.project_simplex {
            let v: Vec<f64> = s.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
            let proj = StyleVector::relaxed([v[0], v[1], v[2]]).project_simplex();
            s.set(&Tensor::new(&[proj.values()], &Device::Cpu)?.to_dtype(dtype)?)?;
        }
    }
    let best = trace
        .iter()
        .filter(|t| t.loss.is_finite())
        .min_by(|a, b| a.loss.total_cmp(&b.loss))
        .cloned();
    let (s_best, loss, step) = match best {
        Some(b) => (b.s, b.loss, b.step),
        None => (init.values(), f64::NAN, 0),
    };
    let s_best = StyleVector::new(s_best).unwrap_or(StyleVector::relaxed(s_best));
    Ok(StyleSearchState {
        s: s_best,
        loss,
        step,
        trace,
        aborted,
    })
}

/// CSV columns `step,s0,s1,s2,loss`.
pub fn write_trace_csv(path: &Path, trace: &[TracePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["step", "s0", "s1", "s2", "loss"])
        .map_err(|e| csv_err(path, e))?;
    for t in trace {
        w.write_record([
            t.step.to_string(),
            t.s[0].to_string(),
            t.s[1].to_string(),
            t.s[2].to_string(),
            t.loss.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}
