use candle_core::{DType, Tensor};

use super::params::{Conv, ParamStore};
use crate::error::{Error, Result};
use crate::ops;

const SLOPE: f64 = 0.2;

/// Three 4×4 stride-2 down blocks shared by every patch discriminator.
struct DownTrunk {
    d1: Conv,
    d2: Conv,
    d3: Conv,
}

impl DownTrunk {
    fn new(s: &mut ParamStore, prefix: &str, cin: usize, c: usize) -> Result<Self> {
        Ok(Self {
            d1: s.conv(&format!("{prefix}down1"), cin, c, 4, 2)?,
            d2: s.conv(&format!("{prefix}down2"), c, 2 * c, 4, 2)?,
            d3: s.conv(&format!("{prefix}down3"), 2 * c, 4 * c, 4, 2)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = ops::leaky_relu(&self.d1.forward(x)?, SLOPE)?;
        let h = ops::leaky_relu(&ops::instance_norm(&self.d2.forward(&h)?)?, SLOPE)?;
        ops::leaky_relu(&ops::instance_norm(&self.d3.forward(&h)?)?, SLOPE)
    }
}

/// Two flat convs turning trunk features into per-patch logits.
struct PatchHead {
    f1: Conv,
    f2: Conv,
}

impl PatchHead {
    fn new(s: &mut ParamStore, prefix: &str, c: usize) -> Result<Self> {
        Ok(Self {
            f1: s.conv(&format!("{prefix}flat1"), 4 * c, 8 * c, 3, 1)?,
            f2: s.conv(&format!("{prefix}flat2"), 8 * c, 1, 3, 1)?,
        })
    }

    fn forward(&self, h: &Tensor) -> Result<Tensor> {
        let h = ops::leaky_relu(&ops::instance_norm(&self.f1.forward(h)?)?, SLOPE)?;
        self.f2.forward(&h)
    }
}

fn check_input(x: &Tensor, channels: usize) -> Result<()> {
    let (_, c, h, w) = x.dims4()?;
    if c != channels {
        return Err(Error::Shape(format!(
            "discriminator expects {channels} channels, got {c}"
        )));
    }
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::Shape(format!(
            "discriminator input {h}x{w} must be divisible by 8"
        )));
    }
    Ok(())
}

/// PatchGAN: logits at exactly 1/8 of the input resolution.
pub struct PatchDiscriminator {
    store: ParamStore,
    in_channels: usize,
    trunk: DownTrunk,
    head: PatchHead,
}

impl PatchDiscriminator {
    pub fn new(in_channels: usize, base_channels: usize, seed: u64, dtype: DType) -> Result<Self> {
        let mut s = ParamStore::new(seed, dtype);
        let trunk = DownTrunk::new(&mut s, "", in_channels, base_channels)?;
        let head = PatchHead::new(&mut s, "", base_channels)?;
        Ok(Self {
            store: s,
            in_channels,
            trunk,
            head,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// `N×C×H×W → N×1×H/8×W/8` logits.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x, self.in_channels)?;
        let x = ops::match_dtype(x, self.store.dtype())?;
        self.head.forward(&self.trunk.forward(&x)?)
    }
}

/// Real/fake patch logits plus, for the global drawing discriminator, style
/// logits.
#[derive(Clone, Debug)]
pub struct DiscriminatorOutput {
    pub rf_map: Tensor,
    pub cls_logits: Option<Tensor>,
}

impl DiscriminatorOutput {
    /// Softmax over the style logits, `N×3`.
    pub fn cls_probs(&self) -> Result<Option<Tensor>> {
        match &self.cls_logits {
            Some(l) => Ok(Some(candle_nn::ops::softmax(l, 1)?)),
            None => Ok(None),
        }
    }
}

/// Global drawing discriminator: a shared down trunk feeding a patch
/// real/fake branch and a style classification branch (two more 3×3
/// stride-2 downs, which stay valid down to 1×1 maps, a conv to 3 channels
/// and global average pooling).
pub struct DrawingDiscriminator {
    store: ParamStore,
    in_channels: usize,
    trunk: DownTrunk,
    rf: PatchHead,
    cls1: Conv,
    cls2: Conv,
    cls3: Conv,
}

impl DrawingDiscriminator {
    pub fn new(in_channels: usize, base_channels: usize, seed: u64, dtype: DType) -> Result<Self> {
        let c = base_channels;
        let mut s = ParamStore::new(seed, dtype);
        let trunk = DownTrunk::new(&mut s, "", in_channels, c)?;
        let rf = PatchHead::new(&mut s, "rf.", c)?;
        let cls1 = s.conv("cls.down4", 4 * c, 8 * c, 3, 2)?;
        let cls2 = s.conv("cls.down5", 8 * c, 8 * c, 3, 2)?;
        let cls3 = s.conv("cls.out", 8 * c, 3, 3, 1)?;
        Ok(Self {
            store: s,
            in_channels,
            trunk,
            rf,
            cls1,
            cls2,
            cls3,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscriminatorOutput> {
        check_input(x, self.in_channels)?;
        let x = ops::match_dtype(x, self.store.dtype())?;
        let h = self.trunk.forward(&x)?;
        let rf_map = self.rf.forward(&h)?;
        let mut c = ops::leaky_relu(&ops::instance_norm(&self.cls1.forward(&h)?)?, SLOPE)?;
        c = ops::leaky_relu(&self.cls2.forward(&c)?, SLOPE)?;
        let cls_logits = ops::global_avg_pool(&self.cls3.forward(&c)?)?;
        Ok(DiscriminatorOutput {
            rf_map,
            cls_logits: Some(cls_logits),
        })
    }
}

/// Local discriminator input: the drawing where the mask is set, white
/// elsewhere.
pub fn mask_drawing(d: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let mask = ops::match_dtype(mask, d.dtype())?;
    let inv = mask.affine(-1.0, 1.0)?;
    Ok(d.broadcast_mul(&mask)?.broadcast_add(&inv)?)
}

/// One patch discriminator per facial region, in [`LOCAL_REGIONS`] order.
///
/// [`LOCAL_REGIONS`]: crate::corpus::LOCAL_REGIONS
pub struct LocalDiscriminators {
    pub nets: Vec<(String, PatchDiscriminator)>,
}

impl LocalDiscriminators {
    pub fn new(base_channels: usize, seed: u64, dtype: DType) -> Result<Self> {
        let nets = crate::corpus::LOCAL_REGIONS
            .iter()
            .enumerate()
            .map(|(i, r)| {
                Ok((
                    r.to_string(),
                    PatchDiscriminator::new(1, base_channels, seed.wrapping_add(101 + i as u64), dtype)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self { nets })
    }

    /// Patch logits for one region over the samples whose mask is
    /// non-empty; `None` when every mask in the batch is empty.
    pub fn discriminate(&self, region: &str, d: &Tensor, mask: &Tensor) -> Result<Option<Tensor>> {
        let net = self
            .nets
            .iter()
            .find(|(r, _)| r == region)
            .map(|(_, n)| n)
            .ok_or_else(|| Error::Validation(format!("no local discriminator for `{region}`")))?;
        let n = mask.dim(0)?;
        let areas: Vec<f64> = mask
            .to_dtype(DType::F64)?
            .reshape((n, ()))?
            .sum(1)?
            .to_vec1()?;
        let keep: Vec<u32> = (0..n as u32).filter(|&i| areas[i as usize] > 0.0).collect();
        if keep.len() < n {
            log::warn!(
                "{} sample(s) with an empty `{region}` mask skipped for the local term",
                n - keep.len()
            );
        }
        if keep.is_empty() {
            return Ok(None);
        }
        let (d, mask) = if keep.len() == n {
            (d.clone(), mask.clone())
        } else {
            let idx = Tensor::new(keep.as_slice(), d.device())?;
            (d.index_select(&idx, 0)?, mask.index_select(&idx, 0)?)
        };
        Ok(Some(net.forward(&mask_drawing(&d, &mask)?)?))
    }
}
