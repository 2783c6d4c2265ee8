use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{check_same_shape, EdgeExtractor, Embedder, FeatureExtractor, FeatureStack, PerceptualMetric};
use crate::error::Result;
use crate::ops;

const EDGE_EPS: f64 = 1.0 / 1024.0;

/// Gradient magnitude of the channel mean, forward differences with a
/// replicated border, scaled so a full black-to-white step reads 1.
pub struct GradientEdges;

impl EdgeExtractor for GradientEdges {
    fn extract(&self, images: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = images.dims4()?;
        let x = images.mean_keepdim(1)?;
        let gx = x.pad_with_same(3, 0, 1)?.narrow(3, 1, w)?.sub(&x)?;
        let gy = x.pad_with_same(2, 0, 1)?.narrow(2, 1, h)?.sub(&x)?;
        let mag = ((gx.sqr()? + gy.sqr()?)? + EDGE_EPS * EDGE_EPS)?.sqrt()?;
        let out = ((mag - EDGE_EPS)? / std::f64::consts::SQRT_2)?;
        Ok(out.clamp(0.0, 1.0)?)
    }
}

struct SeededConv {
    weight: Tensor,
    stride: usize,
}

fn seeded_convs(seed: u64, salt: u64, plan: &[(usize, usize, usize)]) -> Vec<SeededConv> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    plan.iter()
        .map(|&(cin, cout, stride)| {
            let std = (2.0 / (cin * 9) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let data: Vec<f64> = (0..cout * cin * 9).map(|_| normal.sample(&mut rng)).collect();
            let weight = Tensor::from_vec(data, (cout, cin, 3, 3), &Device::Cpu)
                .expect("weight shape");
            SeededConv { weight, stride }
        })
        .collect()
}

fn as_float(x: &Tensor) -> Result<Tensor> {
    Ok(match x.dtype() {
        DType::F32 | DType::F64 => x.clone(),
        _ => x.to_dtype(DType::F32)?,
    })
}

/// Mean squared difference summed over the raw input and three levels of a
/// fixed random conv pyramid.
pub struct PyramidPerceptual {
    convs: Vec<SeededConv>,
}

impl PyramidPerceptual {
    pub fn new(seed: u64) -> Self {
        Self {
            convs: seeded_convs(seed, 0x5045_5243, &[(3, 8, 2), (8, 16, 2), (16, 32, 2)]),
        }
    }

    fn levels(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = ops::replicate_channels(&as_float(x)?, 3)?;
        let mut out = vec![h.clone()];
        for c in &self.convs {
            h = ops::leaky_relu(&ops::conv2d(&h, &c.weight, None, c.stride, 1)?, 0.2)?;
            out.push(h.clone());
        }
        Ok(out)
    }
}

fn per_sample_mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = a.dim(0)?;
    Ok(a.sub(b)?.sqr()?.reshape((n, ()))?.mean(1)?)
}

impl PerceptualMetric for PyramidPerceptual {
    fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        check_same_shape(a, b)?;
        let la = self.levels(a)?;
        let lb = self.levels(b)?;
        let mut total = per_sample_mse(&la[0], &lb[0])?;
        for (x, y) in la.iter().zip(&lb).skip(1) {
            total = (total + per_sample_mse(x, y)?)?;
        }
        Ok(total)
    }
}

/// Five-level seeded random conv pyramid, channels 8..128, full resolution
/// first then halving.
pub struct PyramidFeatures {
    convs: Vec<SeededConv>,
}

impl PyramidFeatures {
    pub const CHANNELS: [usize; 5] = [8, 16, 32, 64, 128];

    pub fn new(seed: u64) -> Self {
        Self {
            convs: seeded_convs(
                seed,
                0x4645_4154,
                &[(3, 8, 1), (8, 16, 2), (16, 32, 2), (32, 64, 2), (64, 128, 2)],
            ),
        }
    }

    fn run(&self, x: &Tensor, upto: usize) -> Result<Vec<Tensor>> {
        let mut h = ops::replicate_channels(&as_float(x)?, 3)?;
        let mut out = Vec::new();
        for c in &self.convs[..upto] {
            h = ops::conv2d(&h, &c.weight, None, c.stride, 1)?.relu()?;
            out.push(h.clone());
        }
        Ok(out)
    }
}

impl FeatureExtractor for PyramidFeatures {
    fn features(&self, images: &Tensor) -> Result<FeatureStack> {
        FeatureStack::new(self.run(images, 5)?)
    }
}

/// Global average of the fourth fallback feature level, `E = 64`.
pub struct PooledEmbedder {
    features: PyramidFeatures,
}

impl PooledEmbedder {
    pub fn new(seed: u64) -> Self {
        Self {
            features: PyramidFeatures::new(seed),
        }
    }
}

impl Embedder for PooledEmbedder {
    fn embed(&self, images: &Tensor) -> Result<Tensor> {
        let levels = self.features.run(images, 4)?;
        ops::global_avg_pool(&levels[3])
    }

    fn dim(&self) -> usize {
        PyramidFeatures::CHANNELS[3]
    }
}
