use std::path::Path;
use std::sync::Arc;

use candle_core::{DType, Tensor};

use super::params::{read_checkpoint_header, Conv, Linear, ParamStore};
use super::{KIND_CLASSIFIER, KIND_METRIC};
use crate::backbones::Embedder;
use crate::error::{Error, Result};
use crate::ops;

/// Feature trunk shared by the style classifier and the quality regressor.
#[derive(Clone)]
pub enum TrunkKind {
    /// Four stride-2 convs of width `base, 2·base, 4·base, 4·base`, then
    /// global average pooling. Trained with the head.
    Conv { base: usize },
    /// A frozen pretrained embedder; only the head is trained.
    Backbone(Arc<dyn Embedder>),
}

enum Trunk {
    Conv(Vec<Conv>),
    Backbone(Arc<dyn Embedder>),
}

impl TrunkKind {
    /// Checkpoint config text; a backbone trunk is recorded by its width.
    fn config_json(&self, head: &str) -> String {
        match self {
            TrunkKind::Conv { base } => {
                format!(r#"{{"head":"{head}","trunk":"conv","base":{base}}}"#)
            }
            TrunkKind::Backbone(e) => {
                format!(r#"{{"head":"{head}","trunk":"backbone","dim":{}}}"#, e.dim())
            }
        }
    }

    /// Rebuilds the trunk recorded in a checkpoint; a backbone trunk needs
    /// the embedder supplied again.
    fn from_config(config: &str, backbone: Option<Arc<dyn Embedder>>) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(config)
            .map_err(|e| Error::Checkpoint(format!("bad head config: {e}")))?;
        match v["trunk"].as_str() {
            Some("conv") => Ok(TrunkKind::Conv {
                base: v["base"]
                    .as_u64()
                    .ok_or_else(|| Error::Checkpoint("conv trunk without base".into()))?
                    as usize,
            }),
            Some("backbone") => backbone.map(TrunkKind::Backbone).ok_or_else(|| {
                Error::Checkpoint("checkpoint uses a backbone trunk; none was supplied".into())
            }),
            other => Err(Error::Checkpoint(format!("unknown trunk {other:?}"))),
        }
    }
}

impl Trunk {
    fn new(kind: TrunkKind, s: &mut ParamStore) -> Result<(Self, usize)> {
        match kind {
            TrunkKind::Conv { base } => {
                let widths = [1, base, 2 * base, 4 * base, 4 * base];
                let convs = widths
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| s.conv(&format!("trunk{i}"), w[0], w[1], 4, 2))
                    .collect::<Result<Vec<_>>>()?;
                Ok((Trunk::Conv(convs), 4 * base))
            }
            TrunkKind::Backbone(e) => {
                let d = e.dim();
                Ok((Trunk::Backbone(e), d))
            }
        }
    }

    fn forward(&self, x: &Tensor, dtype: DType) -> Result<Tensor> {
        let x = ops::match_dtype(x, dtype)?;
        if x.dim(1)? != 1 {
            return Err(Error::Shape(format!(
                "drawing models expect 1 channel, got {}",
                x.dim(1)?
            )));
        }
        match self {
            Trunk::Conv(convs) => {
                let mut h = x;
                for c in convs {
                    h = ops::leaky_relu(&c.forward(&h)?, 0.2)?;
                }
                ops::global_avg_pool(&h)
            }
            Trunk::Backbone(e) => Ok(ops::match_dtype(&e.embed(&x)?.detach(), dtype)?),
        }
    }
}

/// Style classifier `C`: 3 logits per drawing.
pub struct StyleClassifier {
    store: ParamStore,
    trunk: Trunk,
    head: Linear,
    config: String,
}

impl StyleClassifier {
    pub fn new(kind: TrunkKind, seed: u64, dtype: DType) -> Result<Self> {
        let config = kind.config_json(KIND_CLASSIFIER);
        let mut s = ParamStore::new(seed, dtype);
        let (trunk, dim) = Trunk::new(kind, &mut s)?;
        let head = s.linear("head", dim, 3)?;
        Ok(Self {
            store: s,
            trunk,
            head,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path, KIND_CLASSIFIER, &self.config)
    }

    pub fn load(path: &Path, dtype: DType, backbone: Option<Arc<dyn Embedder>>) -> Result<Self> {
        let header = read_checkpoint_header(path)?;
        let c = Self::new(TrunkKind::from_config(&header.config, backbone)?, 0, dtype)?;
        c.store.load(path, KIND_CLASSIFIER)?;
        Ok(c)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn logits(&self, d: &Tensor) -> Result<Tensor> {
        self.head.forward(&self.trunk.forward(d, self.store.dtype())?)
    }

    /// `N×3` probabilities.
    pub fn probs(&self, d: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::softmax(&self.logits(d)?, 1)?)
    }
}

/// Quality regressor `M`: one score in `[0.1, 1]` per drawing.
pub struct QualityRegressor {
    store: ParamStore,
    trunk: Trunk,
    head: Linear,
    config: String,
}

impl QualityRegressor {
    pub fn new(kind: TrunkKind, seed: u64, dtype: DType) -> Result<Self> {
        let config = kind.config_json(KIND_METRIC);
        let mut s = ParamStore::new(seed, dtype);
        let (trunk, dim) = Trunk::new(kind, &mut s)?;
        let head = s.linear("head", dim, 1)?;
        Ok(Self {
            store: s,
            trunk,
            head,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path, KIND_METRIC, &self.config)
    }

    pub fn load(path: &Path, dtype: DType, backbone: Option<Arc<dyn Embedder>>) -> Result<Self> {
        let header = read_checkpoint_header(path)?;
        let m = Self::new(TrunkKind::from_config(&header.config, backbone)?, 0, dtype)?;
        m.store.load(path, KIND_METRIC)?;
        Ok(m)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// `N` scores, `0.1 + 0.9·σ(z)`.
    pub fn forward(&self, d: &Tensor) -> Result<Tensor> {
        let z = self.head.forward(&self.trunk.forward(d, self.store.dtype())?)?;
        Ok((ops::sigmoid(&z.squeeze(1)?)? * 0.9)?.affine(1.0, 0.1)?)
    }
}
