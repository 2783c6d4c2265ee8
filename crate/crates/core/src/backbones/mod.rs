//! Frozen pretrained functions consumed by the losses and evaluators: an edge
//! extractor, a perceptual distance, a five-level feature pyramid and an
//! embedding for FID. Each has a seeded built-in fallback.

mod fallback;
mod graph;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};

use crate::config::BackbonesConfig;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub use fallback::{GradientEdges, PooledEmbedder, PyramidFeatures, PyramidPerceptual};
pub use graph::{GraphEdges, GraphEmbedder, GraphFeatures, GraphOp, GraphPerceptual, SequentialGraph};

/// `N×C×H×W` in `[0,1]` to `N×1×H×W` edge probabilities.
pub trait EdgeExtractor: Send + Sync {
    fn extract(&self, images: &Tensor) -> Result<Tensor>;
}

/// Batched distance, one value per sample (`N`). Inputs must share a shape.
pub trait PerceptualMetric: Send + Sync {
    fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor>;
}

pub trait FeatureExtractor: Send + Sync {
    fn features(&self, images: &Tensor) -> Result<FeatureStack>;
}

pub trait Embedder: Send + Sync {
    /// `N×C×H×W → N×E`.
    fn embed(&self, images: &Tensor) -> Result<Tensor>;
    fn dim(&self) -> usize;
}

/// Five activations, coarsening along the list.
#[derive(Clone, Debug)]
pub struct FeatureStack {
    activations: Vec<Tensor>,
}

impl FeatureStack {
    pub const LEVELS: usize = 5;

    pub fn new(activations: Vec<Tensor>) -> Result<Self> {
        if activations.len() != Self::LEVELS {
            return Err(Error::Shape(format!(
                "feature stack needs {} levels, got {}",
                Self::LEVELS,
                activations.len()
            )));
        }
        let mut prev = usize::MAX;
        for a in &activations {
            let (_, _, h, w) = a.dims4()?;
            if h * w > prev {
                return Err(Error::Shape("feature sizes must be non-increasing".into()));
            }
            prev = h * w;
        }
        Ok(Self { activations })
    }

    pub fn activations(&self) -> &[Tensor] {
        &self.activations
    }

    pub fn level(&self, i: usize) -> &Tensor {
        &self.activations[i]
    }

    pub fn channels(&self) -> Vec<usize> {
        self.activations.iter().map(|a| a.dim(1).unwrap_or(0)).collect()
    }

    pub fn spatial(&self) -> Vec<(usize, usize)> {
        self.activations
            .iter()
            .map(|a| (a.dim(2).unwrap_or(0), a.dim(3).unwrap_or(0)))
            .collect()
    }
}

/// Single-channel edge probabilities with the size of the source image.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap(pub ImageTensor);

impl EdgeMap {
    pub fn values(&self) -> &ImageTensor {
        &self.0
    }
}

/// Counts calls into a wrapped edge extractor.
pub struct CountingEdges {
    inner: Arc<dyn EdgeExtractor>,
    calls: AtomicUsize,
}

impl CountingEdges {
    pub fn new(inner: Arc<dyn EdgeExtractor>) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl EdgeExtractor for CountingEdges {
    fn extract(&self, images: &Tensor) -> Result<Tensor> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.extract(images)
    }
}

#[derive(Clone)]
pub struct Backbones {
    pub edges: Arc<dyn EdgeExtractor>,
    pub perceptual: Arc<dyn PerceptualMetric>,
    pub features: Arc<dyn FeatureExtractor>,
    pub embedder: Arc<dyn Embedder>,
}

impl Backbones {
    pub fn fallback(seed: u64) -> Self {
        Self {
            edges: Arc::new(GradientEdges),
            perceptual: Arc::new(PyramidPerceptual::new(seed)),
            features: Arc::new(PyramidFeatures::new(seed)),
            embedder: Arc::new(PooledEmbedder::new(seed)),
        }
    }

    pub fn from_config(cfg: &BackbonesConfig) -> Result<Self> {
        let missing = |key: &str| {
            Error::Config(format!(
                "backbones.{key}: adapter weights missing and fallback disabled"
            ))
        };
        let edges: Arc<dyn EdgeExtractor> = match (&cfg.edge, cfg.fallback) {
            (Some(p), _) => Arc::new(GraphEdges::load(p)?),
            (None, true) => Arc::new(GradientEdges),
            (None, false) => return Err(missing("edge")),
        };
        let perceptual: Arc<dyn PerceptualMetric> = match (&cfg.perceptual, cfg.fallback) {
            (Some(p), _) => Arc::new(GraphPerceptual::load(p)?),
            (None, true) => Arc::new(PyramidPerceptual::new(cfg.seed)),
            (None, false) => return Err(missing("perceptual")),
        };
        let features: Arc<dyn FeatureExtractor> = match (&cfg.features, cfg.fallback) {
            (Some(p), _) => Arc::new(GraphFeatures::load(p)?),
            (None, true) => Arc::new(PyramidFeatures::new(cfg.seed)),
            (None, false) => return Err(missing("features")),
        };
        let embedder: Arc<dyn Embedder> = match (&cfg.fid, cfg.fallback) {
            (Some(p), _) => Arc::new(GraphEmbedder::load(p)?),
            (None, true) => Arc::new(PooledEmbedder::new(cfg.seed)),
            (None, false) => return Err(missing("fid")),
        };
        Ok(Self {
            edges,
            perceptual,
            features,
            embedder,
        })
    }

    pub fn with_edges(mut self, edges: Arc<dyn EdgeExtractor>) -> Self {
        self.edges = edges;
        self
    }

    pub fn extract_edges(&self, image: &ImageTensor) -> Result<EdgeMap> {
        let t = image.to_tensor(DType::F32, &Device::Cpu)?;
        let e = self.edges.extract(&t)?;
        let mut out = ImageTensor::unstack(&e)?;
        Ok(EdgeMap(out.remove(0)))
    }

    pub fn perceptual_distance(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
        if (a.channels(), a.height(), a.width()) != (b.channels(), b.height(), b.width()) {
            return Err(Error::Shape(format!(
                "perceptual_distance: {}x{}x{} vs {}x{}x{}",
                a.channels(),
                a.height(),
                a.width(),
                b.channels(),
                b.height(),
                b.width()
            )));
        }
        let ta = a.to_tensor(DType::F64, &Device::Cpu)?;
        let tb = b.to_tensor(DType::F64, &Device::Cpu)?;
        let d = self.perceptual.distance(&ta, &tb)?;
        Ok(d.to_vec1::<f64>()?[0])
    }

    pub fn feature_activations(&self, image: &ImageTensor) -> Result<FeatureStack> {
        self.features
            .features(&image.to_tensor(DType::F32, &Device::Cpu)?)
    }

    /// One row per image.
    pub fn embed_for_fid(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        if images.len() < 2 {
            return Err(Error::Validation(
                "embedding for FID needs at least 2 images".into(),
            ));
        }
        let mut rows = Vec::with_capacity(images.len());
        for chunk in images.chunks(16) {
            let t = ImageTensor::stack(chunk, DType::F32, &Device::Cpu)?;
            let e = self.embedder.embed(&t)?.to_dtype(DType::F64)?;
            rows.extend(e.to_vec2::<f64>()?);
        }
        Ok(rows)
    }
}

pub(crate) fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "perceptual distance on {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}
