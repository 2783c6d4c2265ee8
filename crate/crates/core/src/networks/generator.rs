use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::params::{Conv, ParamStore};
use crate::error::{Error, Result};
use crate::ops;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub n_resblocks: usize,
    pub image_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Whether a 3-d style code is injected after the second down block.
    pub style_input: bool,
}

impl GeneratorConfig {
    /// Photo to drawing with style injection.
    pub fn drawing(base_channels: usize, n_resblocks: usize, image_size: usize) -> Self {
        Self {
            base_channels,
            n_resblocks,
            image_size,
            in_channels: 3,
            out_channels: 1,
            style_input: true,
        }
    }

    /// Drawing back to photo.
    pub fn inverse(base_channels: usize, n_resblocks: usize, image_size: usize) -> Self {
        Self {
            base_channels,
            n_resblocks,
            image_size,
            in_channels: 1,
            out_channels: 3,
            style_input: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_resblocks == 0 {
            return Err(Error::Validation("n_resblocks must be at least 1".into()));
        }
        if self.base_channels == 0 {
            return Err(Error::Validation("base_channels must be positive".into()));
        }
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::Validation(format!(
                "image_size {} must be divisible by 4",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// Encoder, optional style merge, residual trunk, decoder.
///
/// Up-sampling blocks are nearest-neighbour ×2 followed by a 3×3 conv.
pub struct Generator {
    cfg: GeneratorConfig,
    store: ParamStore,
    enc_flat: Conv,
    down1: Conv,
    down2: Conv,
    merge: Option<Conv>,
    res: Vec<(Conv, Conv)>,
    up1: Conv,
    up2: Conv,
    out: Conv,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.base_channels;
        let mut s = ParamStore::new(seed, dtype);
        let enc_flat = s.conv("enc_flat", cfg.in_channels, c, 7, 1)?;
        let down1 = s.conv("down1", c, 2 * c, 3, 2)?;
        let down2 = s.conv("down2", 2 * c, 4 * c, 3, 2)?;
        let merge = if cfg.style_input {
            Some(s.conv("merge", 4 * c + 3, 4 * c, 3, 1)?)
        } else {
            None
        };
        let mut res = Vec::with_capacity(cfg.n_resblocks);
        for k in 0..cfg.n_resblocks {
            res.push((
                s.conv(&format!("res{k}.conv1"), 4 * c, 4 * c, 3, 1)?,
                s.conv(&format!("res{k}.conv2"), 4 * c, 4 * c, 3, 1)?,
            ));
        }
        let up1 = s.conv("up1", 4 * c, 2 * c, 3, 1)?;
        let up2 = s.conv("up2", 2 * c, c, 3, 1)?;
        let out = s.conv("out", c, cfg.out_channels, 7, 1)?;
        Ok(Self {
            cfg,
            store: s,
            enc_flat,
            down1,
            down2,
            merge,
            res,
            up1,
            up2,
            out,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Looks up a conv layer by its unit name.
    pub fn layer(&self, name: &str) -> Option<&Conv> {
        match name {
            "enc_flat" => Some(&self.enc_flat),
            "down1" => Some(&self.down1),
            "down2" => Some(&self.down2),
            "merge" => self.merge.as_ref(),
            "up1" => Some(&self.up1),
            "up2" => Some(&self.up2),
            "out" => Some(&self.out),
            _ => {
                let (block, which) = name.strip_prefix("res")?.split_once(".conv")?;
                let (c1, c2) = self.res.get(block.parse::<usize>().ok()?)?;
                match which {
                    "1" => Some(c1),
                    "2" => Some(c2),
                    _ => None,
                }
            }
        }
    }

    /// Conv layers in forward order with their output channel counts; these
    /// are the units a dissection can label.
    pub fn units(&self) -> Vec<(String, usize)> {
        let mut v = vec![
            ("enc_flat".to_string(), self.enc_flat.out_channels()),
            ("down1".to_string(), self.down1.out_channels()),
            ("down2".to_string(), self.down2.out_channels()),
        ];
        if let Some(m) = &self.merge {
            v.push(("merge".to_string(), m.out_channels()));
        }
        for (k, (c1, c2)) in self.res.iter().enumerate() {
            v.push((format!("res{k}.conv1"), c1.out_channels()));
            v.push((format!("res{k}.conv2"), c2.out_channels()));
        }
        v.push(("up1".to_string(), self.up1.out_channels()));
        v.push(("up2".to_string(), self.up2.out_channels()));
        v.push(("out".to_string(), self.out.out_channels()));
        v
    }

    pub fn unit_count(&self) -> usize {
        self.units().iter().map(|(_, n)| n).sum()
    }

    pub fn forward(&self, x: &Tensor, style: Option<&Tensor>) -> Result<Tensor> {
        self.run(x, style, &mut |_, _| Ok(()))
    }

    /// Forward pass reporting each layer's post-activation map to `tap`.
    pub fn forward_tapped(
        &self,
        x: &Tensor,
        style: Option<&Tensor>,
        tap: &mut dyn FnMut(&str, &Tensor) -> Result<()>,
    ) -> Result<Tensor> {
        self.run(x, style, tap)
    }

    fn run(
        &self,
        x: &Tensor,
        style: Option<&Tensor>,
        tap: &mut dyn FnMut(&str, &Tensor) -> Result<()>,
    ) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.cfg.in_channels {
            return Err(Error::Shape(format!(
                "generator expects {} input channels, got {c}",
                self.cfg.in_channels
            )));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Shape(format!(
                "generator input {h}x{w} must be divisible by 4"
            )));
        }
        let x = ops::match_dtype(x, self.store.dtype())?;
        let block = |conv: &Conv, x: &Tensor| -> Result<Tensor> {
            Ok(ops::instance_norm(&conv.forward(x)?)?.relu()?)
        };
        let mut hcur = block(&self.enc_flat, &x)?;
        tap("enc_flat", &hcur)?;
        hcur = block(&self.down1, &hcur)?;
        tap("down1", &hcur)?;
        hcur = block(&self.down2, &hcur)?;
        tap("down2", &hcur)?;
        if let Some(merge) = &self.merge {
            let s = style.ok_or_else(|| Error::Shape("generator needs a style code".into()))?;
            let s = ops::match_dtype(s, hcur.dtype())?;
            if s.dims() != [n, 3] {
                return Err(Error::Shape(format!(
                    "style code must be {n}x3, got {:?}",
                    s.dims()
                )));
            }
            let (_, _, hh, ww) = hcur.dims4()?;
            let smap = s.reshape((n, 3, 1, 1))?.broadcast_as((n, 3, hh, ww))?;
            // No normalization here: the style map is spatially constant, so
            // instance norm would cancel its contribution exactly.
            hcur = merge.forward(&Tensor::cat(&[&hcur, &smap], 1)?)?.relu()?;
            tap("merge", &hcur)?;
        }
        for (k, (c1, c2)) in self.res.iter().enumerate() {
            let r = block(c1, &hcur)?;
            tap(&format!("res{k}.conv1"), &r)?;
            let r = ops::instance_norm(&c2.forward(&r)?)?;
            tap(&format!("res{k}.conv2"), &r)?;
            hcur = (hcur + r)?;
        }
        let up = |conv: &Conv, x: &Tensor| -> Result<Tensor> {
            let (_, _, hh, ww) = x.dims4()?;
            block(conv, &x.upsample_nearest2d(2 * hh, 2 * ww)?)
        };
        hcur = up(&self.up1, &hcur)?;
        tap("up1", &hcur)?;
        hcur = up(&self.up2, &hcur)?;
        tap("up2", &hcur)?;
        let y = ops::sigmoid(&self.out.forward(&hcur)?)?;
        tap("out", &y)?;
        Ok(y)
    }
}
