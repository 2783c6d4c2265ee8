//! Tensor building blocks shared by the backbones and the learnable models.

use candle_core::{DType, Tensor, D};

use crate::error::Result;

/// Convolution over replicate-padded input. Replicate padding keeps every
/// layer translation-equivariant on constant inputs, borders included.
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let x = if pad > 0 {
        x.pad_with_same(2, pad, pad)?.pad_with_same(3, pad, pad)?
    } else {
        x.clone()
    };
    let weight = match_dtype(weight, x.dtype())?;
    let mut y = x.conv2d(&weight, 0, stride, 1, 1)?;
    if let Some(b) = bias {
        let b = match_dtype(b, x.dtype())?;
        y = y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?;
    }
    Ok(y)
}

pub fn match_dtype(t: &Tensor, dtype: DType) -> Result<Tensor> {
    if t.dtype() == dtype {
        Ok(t.clone())
    } else {
        Ok(t.to_dtype(dtype)?)
    }
}

/// Per-sample, per-channel normalization over the spatial dims, no affine.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered
        .sqr()?
        .mean_keepdim(D::Minus1)?
        .mean_keepdim(D::Minus2)?;
    Ok(centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, slope)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let neg_abs = x.abs()?.neg()?;
    Ok((x.relu()? + (neg_abs.exp()? + 1.0)?.log()?)?)
}

/// Tiles a single-channel batch to `channels`; other inputs pass through.
pub fn replicate_channels(x: &Tensor, channels: usize) -> Result<Tensor> {
    let c = x.dim(1)?;
    if c == channels {
        return Ok(x.clone());
    }
    if c == 1 {
        let (n, _, h, w) = x.dims4()?;
        return Ok(x.broadcast_as((n, channels, h, w))?.contiguous()?);
    }
    Ok(x.mean_keepdim(1)?
        .broadcast_as((x.dim(0)?, channels, x.dim(2)?, x.dim(3)?))?
        .contiguous()?)
}

/// `N×C×H×W → N×C`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
