//! Learnable models: the drawing generator `G` with style injection, the
//! inverse generator `F`, the drawing, local and photo discriminators, the
//! style classifier `C` and the quality regressor `M`.

mod discriminator;
mod generator;
mod heads;
mod params;

use std::path::Path;

use candle_core::{DType, Device, Tensor};

pub use discriminator::{
    mask_drawing, DiscriminatorOutput, DrawingDiscriminator, LocalDiscriminators,
    PatchDiscriminator,
};
pub use generator::{Generator, GeneratorConfig};
pub use heads::{QualityRegressor, StyleClassifier, TrunkKind};
pub use params::{
    config_hash, read_checkpoint_header, CheckpointHeader, Conv, Linear, ParamStore,
    SCHEMA_VERSION,
};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::style_vector::StyleVector;

pub const KIND_GENERATOR: &str = "generator";
pub const KIND_INVERSE: &str = "inverse_generator";
pub const KIND_CLASSIFIER: &str = "style_classifier";
pub const KIND_METRIC: &str = "quality_regressor";

/// `N×3` tensor of style codes.
pub fn style_tensor(styles: &[StyleVector], dtype: DType) -> Result<Tensor> {
    let data: Vec<f64> = styles.iter().flat_map(|s| s.values()).collect();
    Ok(Tensor::from_vec(data, (styles.len(), 3), &Device::Cpu)?.to_dtype(dtype)?)
}

fn check_size(img: &ImageTensor, channels: usize, size: usize, what: &str) -> Result<()> {
    if img.channels() != channels || img.height() != size || img.width() != size {
        return Err(Error::Shape(format!(
            "{what} expects {channels}x{size}x{size}, got {}x{}x{}",
            img.channels(),
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

fn single(t: &Tensor) -> Result<ImageTensor> {
    let mut v = ImageTensor::unstack(&t.clamp(0.0, 1.0)?)?;
    Ok(v.remove(0))
}

pub fn generate_drawing(p: &ImageTensor, s: &StyleVector, g: &Generator) -> Result<ImageTensor> {
    check_size(p, 3, g.config().image_size, "generate_drawing")?;
    let dtype = g.store().dtype();
    let x = p.to_tensor(dtype, &Device::Cpu)?;
    single(&g.forward(&x, Some(&style_tensor(&[*s], dtype)?))?)
}

pub fn reconstruct_photo(d: &ImageTensor, f: &Generator) -> Result<ImageTensor> {
    check_size(d, 1, f.config().image_size, "reconstruct_photo")?;
    single(&f.forward(&d.to_tensor(f.store().dtype(), &Device::Cpu)?, None)?)
}

pub fn discriminate_drawing(d: &ImageTensor, net: &DrawingDiscriminator) -> Result<DiscriminatorOutput> {
    net.forward(&d.to_tensor(net.store().dtype(), &Device::Cpu)?)
}

pub fn discriminate_photo(p: &ImageTensor, net: &PatchDiscriminator) -> Result<Tensor> {
    net.forward(&p.to_tensor(net.store().dtype(), &Device::Cpu)?)
}

/// Style code of a drawing: the classifier's softmax output.
pub fn classify_style(d: &ImageTensor, c: &StyleClassifier) -> Result<StyleVector> {
    let p = c.probs(&d.to_tensor(c.store().dtype(), &Device::Cpu)?)?;
    let v: Vec<f64> = p.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let sum: f64 = v.iter().sum();
    StyleVector::new([v[0] / sum, v[1] / sum, v[2] / sum])
}

pub fn predict_quality(d: &ImageTensor, m: &QualityRegressor) -> Result<f64> {
    let q = m.forward(&d.to_tensor(m.store().dtype(), &Device::Cpu)?)?;
    Ok(q.to_dtype(DType::F64)?.to_vec1::<f64>()?[0])
}

impl Generator {
    pub fn save(&self, path: &Path) -> Result<()> {
        let kind = if self.config().style_input {
            KIND_GENERATOR
        } else {
            KIND_INVERSE
        };
        let cfg = serde_json::to_string(self.config()).expect("config serializes");
        self.store().save(path, kind, &cfg)
    }

    /// Rebuilds a generator from the config stored in its checkpoint.
    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        let header = read_checkpoint_header(path)?;
        if header.kind != KIND_GENERATOR && header.kind != KIND_INVERSE {
            return Err(Error::Checkpoint(format!(
                "{} holds a `{}` model, not a generator",
                path.display(),
                header.kind
            )));
        }
        let cfg: GeneratorConfig = serde_json::from_str(&header.config)
            .map_err(|e| Error::Checkpoint(format!("bad generator config: {e}")))?;
        let g = Generator::new(cfg, 0, dtype)?;
        g.store().load(path, &header.kind)?;
        Ok(g)
    }
}
