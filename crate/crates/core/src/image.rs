//! Dense `C×H×W` image storage with intensities in `[0, 1]`.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};

/// A single image stored channel-major. Photos carry 3 channels, drawings,
/// edge maps and masks carry 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot hold {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Channel mean; a no-op for single-channel images.
    pub fn to_gray(&self) -> ImageTensor {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.height * self.width;
        let mut data = vec![0f32; n];
        for c in 0..self.channels {
            for (d, v) in data.iter_mut().zip(self.channel(c)) {
                *d += v;
            }
        }
        let k = self.channels as f32;
        data.iter_mut().for_each(|v| *v /= k);
        ImageTensor {
            channels: 1,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> ImageTensor {
        ImageTensor::from_fn(self.channels, self.height, self.width, |c, y, x| {
            self.get(c, y, self.width - 1 - x)
        })
    }

    /// `1×C×H×W` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(
            &self.data,
            (1, self.channels, self.height, self.width),
            device,
        )?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Stacks same-shaped images into an `N×C×H×W` tensor.
    pub fn stack(images: &[ImageTensor], dtype: DType, device: &Device) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::Validation("cannot stack an empty image list".into()))?;
        let (c, h, w) = (first.channels, first.height, first.width);
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for im in images {
            if (im.channels, im.height, im.width) != (c, h, w) {
                return Err(Error::Shape(format!(
                    "cannot stack {}x{}x{} with {c}x{h}x{w}",
                    im.channels, im.height, im.width
                )));
            }
            data.extend_from_slice(&im.data);
        }
        let t = Tensor::from_vec(data, (images.len(), c, h, w), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Splits an `N×C×H×W` tensor back into images.
    pub fn unstack(t: &Tensor) -> Result<Vec<ImageTensor>> {
        let (n, c, h, w) = t.dims4()?;
        let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        let per = c * h * w;
        Ok((0..n)
            .map(|i| ImageTensor {
                channels: c,
                height: h,
                width: w,
                data: flat[i * per..(i + 1) * per].to_vec(),
            })
            .collect())
    }

    pub fn from_dynamic(img: &DynamicImage, channels: usize) -> Result<Self> {
        match channels {
            1 => {
                let g = img.to_luma8();
                let (w, h) = g.dimensions();
                let data = g.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
                ImageTensor::new(1, h as usize, w as usize, data)
            }
            3 => {
                let rgb = img.to_rgb8();
                let (w, h) = (rgb.width() as usize, rgb.height() as usize);
                let raw = rgb.as_raw();
                Ok(ImageTensor::from_fn(3, h, w, |c, y, x| {
                    raw[(y * w + x) * 3 + c] as f32 / 255.0
                }))
            }
            other => Err(Error::Validation(format!(
                "unsupported channel count {other}"
            ))),
        }
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 3 {
            DynamicImage::ImageRgb8(RgbImage::from_fn(w, h, |x, y| {
                let (x, y) = (x as usize, y as usize);
                image::Rgb([
                    q(self.get(0, y, x)),
                    q(self.get(1, y, x)),
                    q(self.get(2, y, x)),
                ])
            }))
        } else {
            DynamicImage::ImageLuma8(GrayImage::from_fn(w, h, |x, y| {
                image::Luma([q(self.get(0, y as usize, x as usize))])
            }))
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_dynamic()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Decode {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_dynamic()
            .write_to(&mut buf, image::ImageFormat::Png)
            .map_err(|e| Error::Validation(format!("png encoding failed: {e}")))?;
        Ok(buf.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_roundtrip() {
        let a = ImageTensor::from_fn(3, 4, 5, |c, y, x| (c + y + x) as f32 / 12.0);
        let b = a.flip_horizontal();
        let t = ImageTensor::stack(&[a.clone(), b.clone()], DType::F32, &Device::Cpu).unwrap();
        assert_eq!(t.dims4().unwrap(), (2, 3, 4, 5));
        let back = ImageTensor::unstack(&t).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn stack_rejects_mixed_shapes() {
        let a = ImageTensor::filled(1, 4, 4, 0.0);
        let b = ImageTensor::filled(1, 4, 5, 0.0);
        assert!(ImageTensor::stack(&[a, b], DType::F32, &Device::Cpu).is_err());
    }

    #[test]
    fn png_roundtrip_is_quantized() {
        let a = ImageTensor::from_fn(1, 3, 3, |_, y, x| (y * 3 + x) as f32 / 8.0);
        let bytes = a.encode_png().unwrap();
        let img = image::load_from_memory(&bytes).unwrap();
        let b = ImageTensor::from_dynamic(&img, 1).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
