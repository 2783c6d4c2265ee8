use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ops;

pub const SCHEMA_VERSION: &str = "1";

/// Named trainable tensors of one model, initialized from a seeded normal so
/// two runs with the same seed start bit-identically.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn add(&mut self, name: String, shape: &[usize], std: f64) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Validation(format!("duplicate parameter {name}")));
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = if std == 0.0 {
            vec![0.0; n]
        } else {
            let normal = Normal::new(0.0, std).expect("finite std");
            (0..n).map(|_| normal.sample(&mut self.rng)).collect()
        };
        let t = Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(handle)
    }

    pub fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Conv> {
        let weight = self.add(format!("{name}.weight"), &[cout, cin, kernel, kernel], 0.02)?;
        let bias = self.add(format!("{name}.bias"), &[cout], 0.0)?;
        Ok(Conv {
            weight,
            bias,
            stride,
            pad: (kernel - 1) / 2,
            kernel,
        })
    }

    pub fn linear(&mut self, name: &str, din: usize, dout: usize) -> Result<Linear> {
        let std = (1.0 / din as f64).sqrt();
        let weight = self.add(format!("{name}.weight"), &[dout, din], std)?;
        let bias = self.add(format!("{name}.bias"), &[dout], 0.0)?;
        Ok(Linear { weight, bias })
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Copies every parameter out, for before/after comparisons.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f64>>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                Ok((
                    k.clone(),
                    v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?,
                ))
            })
            .collect()
    }

    pub fn save(&self, path: &Path, kind: &str, config_json: &str) -> Result<()> {
        let mut meta = HashMap::new();
        meta.insert("schema_version".to_string(), SCHEMA_VERSION.to_string());
        meta.insert("kind".to_string(), kind.to_string());
        meta.insert("config".to_string(), config_json.to_string());
        meta.insert("config_hash".to_string(), config_hash(config_json));
        let data: Vec<(String, Tensor)> = self
            .vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().to_dtype(DType::F32)?)))
            .collect::<Result<_>>()?;
        let bytes = safetensors::serialize(data, Some(meta))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Overwrites every parameter from a checkpoint written by [`save`].
    /// The checkpoint must carry the same kind and exactly the same names
    /// and shapes.
    ///
    /// [`save`]: ParamStore::save
    pub fn load(&self, path: &Path, kind: &str) -> Result<CheckpointHeader> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let header = read_header(&buf)?;
        if header.kind != kind {
            return Err(Error::Checkpoint(format!(
                "{} holds a `{}` model, expected `{kind}`",
                path.display(),
                header.kind
            )));
        }
        let tensors = candle_core::safetensors::load_buffer(&buf, &Device::Cpu)?;
        if tensors.len() != self.vars.len() {
            return Err(Error::Checkpoint(format!(
                "{} has {} tensors, model has {}",
                path.display(),
                tensors.len(),
                self.vars.len()
            )));
        }
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {:?} vs {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(header)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub schema_version: String,
    pub kind: String,
    pub config: String,
    pub config_hash: String,
}

pub fn config_hash(config_json: &str) -> String {
    let digest = Sha256::digest(config_json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_header(buf: &[u8]) -> Result<CheckpointHeader> {
    let (_, meta) = safetensors::SafeTensors::read_metadata(buf)
        .map_err(|e| Error::Checkpoint(format!("not a checkpoint: {e}")))?;
    let m = meta
        .metadata()
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no header".into()))?;
    let get = |k: &str| {
        m.get(k)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint header lacks `{k}`")))
    };
    let schema_version = get("schema_version")?;
    if schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: schema_version,
            expected: SCHEMA_VERSION.into(),
        });
    }
    let header = CheckpointHeader {
        schema_version,
        kind: get("kind")?,
        config: get("config")?,
        config_hash: get("config_hash")?,
    };
    if config_hash(&header.config) != header.config_hash {
        return Err(Error::Checkpoint("config hash does not match header".into()));
    }
    Ok(header)
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_header(&buf)
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
    pub kernel: usize,
}

impl Conv {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv2d(x, &self.weight, Some(&self.bias), self.stride, self.pad)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// `N×D → N×O`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = ops::match_dtype(&self.weight, x.dtype())?;
        let b = ops::match_dtype(&self.bias, x.dtype())?;
        Ok(x.matmul(&w.t()?)?.broadcast_add(&b)?)
    }
}
