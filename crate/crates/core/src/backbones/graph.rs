//! A minimal runtime for externally exported feed-forward networks.
//!
//! The file is a safetensors archive. Its `graph` metadata entry is a JSON
//! object listing the ops in order; conv weights are stored as
//! `{name}.weight` and, optionally, `{name}.bias`.
//!
//! ```json
//! {"input_channels": 3, "mean": [0.485, 0.456, 0.406], "std": [0.229, 0.224, 0.225],
//!  "ops": [{"op": "conv", "name": "conv1_1", "stride": 1, "pad": 1}, {"op": "relu"},
//!          {"op": "tap"}, {"op": "maxpool", "size": 2}]}
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::{check_same_shape, EdgeExtractor, Embedder, FeatureExtractor, FeatureStack, PerceptualMetric};
use crate::error::{Error, Result};
use crate::ops;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum GraphOp {
    Conv {
        name: String,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
        #[serde(default)]
        replicate: bool,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Sigmoid,
    Maxpool {
        size: usize,
    },
    Avgpool {
        size: usize,
    },
    /// Records the current activation as an output.
    Tap,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GraphSpec {
    input_channels: usize,
    #[serde(default)]
    mean: Option<Vec<f64>>,
    #[serde(default)]
    std: Option<Vec<f64>>,
    ops: Vec<GraphOp>,
}

pub struct SequentialGraph {
    spec: GraphSpec,
    weights: HashMap<String, Tensor>,
    source: PathBuf,
}

impl SequentialGraph {
    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: String| Error::Config(format!("{}: {m}", path.display()));
        let (_, meta) = safetensors::SafeTensors::read_metadata(&buf)
            .map_err(|e| bad(format!("not a safetensors archive: {e}")))?;
        let graph = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get("graph"))
            .ok_or_else(|| bad("missing `graph` metadata".into()))?;
        let spec: GraphSpec =
            serde_json::from_str(graph).map_err(|e| bad(format!("bad graph json: {e}")))?;
        let weights = candle_core::safetensors::load_buffer(&buf, &Device::Cpu)?;
        for op in &spec.ops {
            if let GraphOp::Conv { name, .. } = op {
                if !weights.contains_key(&format!("{name}.weight")) {
                    return Err(bad(format!("missing tensor {name}.weight")));
                }
            }
        }
        for v in [&spec.mean, &spec.std].into_iter().flatten() {
            if v.len() != spec.input_channels {
                return Err(bad("mean/std length must equal input_channels".into()));
            }
        }
        Ok(Self {
            spec,
            weights,
            source: path.to_path_buf(),
        })
    }

    /// Writes a graph archive; the counterpart of [`SequentialGraph::load`].
    pub fn save(
        path: &Path,
        input_channels: usize,
        mean_std: Option<(Vec<f64>, Vec<f64>)>,
        ops: Vec<GraphOp>,
        weights: &HashMap<String, Tensor>,
    ) -> Result<()> {
        let (mean, std) = match mean_std {
            Some((m, s)) => (Some(m), Some(s)),
            None => (None, None),
        };
        let spec = GraphSpec {
            input_channels,
            mean,
            std,
            ops,
        };
        let meta = HashMap::from([(
            "graph".to_string(),
            serde_json::to_string(&spec).expect("graph spec serializes"),
        )]);
        let data: Vec<(String, Tensor)> = weights
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let bytes = safetensors::serialize(data, Some(meta))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn source(&self) -> &Path {
        &self.source
    }

    pub fn input_channels(&self) -> usize {
        self.spec.input_channels
    }

    fn last_conv_channels(&self) -> Option<usize> {
        self.spec.ops.iter().rev().find_map(|op| match op {
            GraphOp::Conv { name, .. } => self.weights[&format!("{name}.weight")].dim(0).ok(),
            _ => None,
        })
    }

    /// Runs the graph; returns the final activation and every tapped one.
    pub fn run(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let x = match x.dtype() {
            DType::F32 | DType::F64 => x.clone(),
            _ => x.to_dtype(DType::F32)?,
        };
        let mut h = ops::replicate_channels(&x, self.spec.input_channels)?;
        if let (Some(m), Some(s)) = (&self.spec.mean, &self.spec.std) {
            let c = m.len();
            let m = Tensor::from_vec(m.clone(), (1, c, 1, 1), &Device::Cpu)?.to_dtype(h.dtype())?;
            let s = Tensor::from_vec(s.clone(), (1, c, 1, 1), &Device::Cpu)?.to_dtype(h.dtype())?;
            h = h.broadcast_sub(&m)?.broadcast_div(&s)?;
        }
        let mut taps = Vec::new();
        for op in &self.spec.ops {
            h = match op {
                GraphOp::Conv {
                    name,
                    stride,
                    pad,
                    replicate,
                } => {
                    let w = ops::match_dtype(&self.weights[&format!("{name}.weight")], h.dtype())?;
                    let b = self.weights.get(&format!("{name}.bias"));
                    if *replicate {
                        ops::conv2d(&h, &w, b, *stride, *pad)?
                    } else {
                        let mut y = h.conv2d(&w, *pad, *stride, 1, 1)?;
                        if let Some(b) = b {
                            let b = ops::match_dtype(b, h.dtype())?;
                            y = y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?;
                        }
                        y
                    }
                }
                GraphOp::Relu => h.relu()?,
                GraphOp::LeakyRelu { slope } => ops::leaky_relu(&h, *slope)?,
                GraphOp::Sigmoid => ops::sigmoid(&h)?,
                GraphOp::Maxpool { size } => h.max_pool2d(*size)?,
                GraphOp::Avgpool { size } => h.avg_pool2d(*size)?,
                GraphOp::Tap => {
                    taps.push(h.clone());
                    h
                }
            };
        }
        Ok((h, taps))
    }
}

/// Edge network adapter: channel 0 of the final activation, resized back to
/// the input size by an integer nearest-neighbour factor and clamped to
/// `[0,1]`. The graph is expected to end in a sigmoid.
pub struct GraphEdges(SequentialGraph);

impl GraphEdges {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self(SequentialGraph::load(path)?))
    }
}

impl EdgeExtractor for GraphEdges {
    fn extract(&self, images: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = images.dims4()?;
        let (out, _) = self.0.run(images)?;
        let mut e = out.narrow(1, 0, 1)?;
        let (_, _, eh, ew) = e.dims4()?;
        if (eh, ew) != (h, w) {
            if eh == 0 || h % eh != 0 || w % ew != 0 || h / eh != w / ew {
                return Err(Error::Shape(format!(
                    "edge graph output {eh}x{ew} cannot be resized to {h}x{w}"
                )));
            }
            e = e.upsample_nearest2d(h, w)?;
        }
        Ok(e.clamp(0.0, 1.0)?)
    }
}

/// Learned-perceptual-style distance: per-channel unit-normalized tapped
/// activations, squared differences weighted by optional `lin{k}.weight`
/// vectors, spatially averaged and summed over taps.
pub struct GraphPerceptual(SequentialGraph);

impl GraphPerceptual {
    pub fn load(path: &Path) -> Result<Self> {
        let g = SequentialGraph::load(path)?;
        if !g.spec.ops.iter().any(|o| *o == GraphOp::Tap) {
            return Err(Error::Config(format!(
                "{}: perceptual graph has no taps",
                path.display()
            )));
        }
        Ok(Self(g))
    }
}

fn unit_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(1)? + 1e-20)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

impl PerceptualMetric for GraphPerceptual {
    fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        check_same_shape(a, b)?;
        let (_, ta) = self.0.run(a)?;
        let (_, tb) = self.0.run(b)?;
        let mut total: Option<Tensor> = None;
        for (k, (x, y)) in ta.iter().zip(&tb).enumerate() {
            let mut d = unit_normalize(x)?.sub(&unit_normalize(y)?)?.sqr()?;
            if let Some(w) = self.0.weights.get(&format!("lin{k}.weight")) {
                let w = ops::match_dtype(w, d.dtype())?.reshape((1, (), 1, 1))?;
                d = d.broadcast_mul(&w)?;
            }
            let term = ops::global_avg_pool(&d.sum_keepdim(1)?)?.squeeze(1)?;
            total = Some(match total {
                Some(t) => (t + term)?,
                None => term,
            });
        }
        Ok(total.expect("at least one tap"))
    }
}

/// Feature adapter: exactly five taps.
pub struct GraphFeatures(SequentialGraph);

impl GraphFeatures {
    pub fn load(path: &Path) -> Result<Self> {
        let g = SequentialGraph::load(path)?;
        let taps = g.spec.ops.iter().filter(|o| **o == GraphOp::Tap).count();
        if taps != FeatureStack::LEVELS {
            return Err(Error::Config(format!(
                "{}: feature graph must tap {} layers, found {taps}",
                path.display(),
                FeatureStack::LEVELS
            )));
        }
        Ok(Self(g))
    }
}

impl FeatureExtractor for GraphFeatures {
    fn features(&self, images: &Tensor) -> Result<FeatureStack> {
        let (_, taps) = self.0.run(images)?;
        FeatureStack::new(taps)
    }
}

/// Embedding adapter: global average of the final activation.
pub struct GraphEmbedder {
    graph: SequentialGraph,
    dim: usize,
}

impl GraphEmbedder {
    pub fn load(path: &Path) -> Result<Self> {
        let graph = SequentialGraph::load(path)?;
        let dim = graph.last_conv_channels().ok_or_else(|| {
            Error::Config(format!("{}: embedding graph has no conv", path.display()))
        })?;
        Ok(Self { graph, dim })
    }
}

impl Embedder for GraphEmbedder {
    fn embed(&self, images: &Tensor) -> Result<Tensor> {
        let (out, _) = self.graph.run(images)?;
        ops::global_avg_pool(&out)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
