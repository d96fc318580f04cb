//! The `[-1, 1]` RGB image carrier shared by every stage of the pipeline.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{imageops::FilterType, RgbImage};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Height x width x 3 image with values in `[-1, 1]`, stored row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::shape(
                "ImageTensor::new",
                format!(
                    "{} values for {height}x{width}x3",
                    height * width * CHANNELS
                ),
                data.len(),
            ));
        }
        if let Some(&bad) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Domain {
                context: "ImageTensor::new",
                value: bad as f64,
                expected: "pixel values within [-1, 1]",
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Checks for a square `size` x `size` image.
    pub fn expect_square(&self, size: usize, context: &'static str) -> Result<()> {
        if self.height != size || self.width != size {
            return Err(Error::shape(
                context,
                format!("{size}x{size}x3"),
                format!("{}x{}x3", self.height, self.width),
            ));
        }
        Ok(())
    }

    /// Unweighted channel mean, one value per pixel.
    pub fn grayscale(&self) -> Vec<f64> {
        self.data
            .chunks_exact(CHANNELS)
            .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0)
            .collect()
    }

    /// Box-filter downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.height.is_multiple_of(factor) || !self.width.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "cannot downsample {}x{} by {factor}",
                self.height, self.width
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let norm = (factor * factor) as f32;
        let mut out = vec![0f32; h * w * CHANNELS];
        for y in 0..h {
            for x in 0..w {
                for c in 0..CHANNELS {
                    let mut acc = 0f32;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            let sy = y * factor + dy;
                            let sx = x * factor + dx;
                            acc += self.data[(sy * self.width + sx) * CHANNELS + c];
                        }
                    }
                    out[(y * w + x) * CHANNELS + c] = (acc / norm).clamp(-1.0, 1.0);
                }
            }
        }
        Self::new(h, w, out)
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidArgument("upsample factor 0".into()));
        }
        let (h, w) = (self.height * factor, self.width * factor);
        let mut out = Vec::with_capacity(h * w * CHANNELS);
        for y in 0..h {
            for x in 0..w {
                out.extend_from_slice(&self.pixel(y / factor, x / factor));
            }
        }
        Self::new(h, w, out)
    }

    /// Square resize: integer box/nearest scaling when possible, triangle filter otherwise.
    pub fn resize_square(&self, size: usize) -> Result<Self> {
        if self.height == size && self.width == size {
            return Ok(self.clone());
        }
        if self.height == self.width {
            if self.height.is_multiple_of(size) {
                return self.downsample(self.height / size);
            }
            if size.is_multiple_of(self.height) {
                return self.upsample_nearest(size / self.height);
            }
        }
        let resized = image::imageops::resize(
            &self.to_rgb8(),
            size as u32,
            size as u32,
            FilterType::Triangle,
        );
        Ok(Self::from_rgb8(&resized))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let data = img
            .as_raw()
            .iter()
            .map(|&v| v as f32 / 127.5 - 1.0)
            .collect();
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            data,
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self.data.iter().map(|&v| to_u8(v)).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// `[1, 3, H, W]` tensor of the requested dtype.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (1, self.height, self.width, CHANNELS), device)?
            .permute((0, 3, 1, 2))?
            .contiguous()?
            .to_dtype(dtype)?;
        Ok(t)
    }

    /// Splits a `[B, 3, H, W]` tensor into images, clamping to `[-1, 1]`.
    pub fn batch_from_tensor(t: &Tensor) -> Result<Vec<Self>> {
        let (b, c, h, w) = t.dims4()?;
        if c != CHANNELS {
            return Err(Error::shape(
                "ImageTensor::batch_from_tensor",
                "3 channels",
                c,
            ));
        }
        let flat: Vec<f32> = t
            .permute((0, 2, 3, 1))?
            .contiguous()?
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1()?;
        Ok(flat
            .chunks_exact(h * w * CHANNELS)
            .take(b)
            .map(|chunk| Self {
                height: h,
                width: w,
                data: chunk.iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
            })
            .collect())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let mut batch = Self::batch_from_tensor(t)?;
        if batch.len() != 1 {
            return Err(Error::shape(
                "ImageTensor::from_tensor",
                "batch of 1",
                batch.len(),
            ));
        }
        Ok(batch.remove(0))
    }

    /// Mean absolute difference over all values.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::shape(
                "ImageTensor::l1_distance",
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(sum / self.data.len() as f64)
    }
}

/// Stacks images into a `[B, 3, H, W]` tensor.
pub fn stack_images(images: &[&ImageTensor], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images.first().ok_or(Error::EmptyDataset)?;
    let (h, w) = (first.height, first.width);
    let mut flat = Vec::with_capacity(images.len() * h * w * CHANNELS);
    for img in images {
        if img.height != h || img.width != w {
            return Err(Error::shape(
                "stack_images",
                format!("{h}x{w}"),
                format!("{}x{}", img.height, img.width),
            ));
        }
        flat.extend_from_slice(&img.data);
    }
    let t = Tensor::from_vec(flat, (images.len(), h, w, CHANNELS), device)?
        .permute((0, 3, 1, 2))?
        .contiguous()?
        .to_dtype(dtype)?;
    Ok(t)
}

fn to_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_bad_length() {
        assert!(ImageTensor::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(ImageTensor::new(2, 2, vec![0.0; 3]).is_err());
        assert!(ImageTensor::new(1, 1, vec![f32::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn byte_encoding_maps_endpoints() {
        let img = ImageTensor::new(1, 2, vec![-1.0, 0.0, 1.0, 1.0, 1.0, -1.0]).unwrap();
        let rgb = img.to_rgb8();
        assert_eq!(rgb.as_raw(), &vec![0, 128, 255, 255, 255, 0]);
        let back = ImageTensor::from_rgb8(&rgb);
        assert_eq!(back.pixel(0, 0)[0], -1.0);
        assert_eq!(back.pixel(0, 0)[2], 1.0);
    }

    #[test]
    fn tensor_round_trip_preserves_layout() {
        let data: Vec<f32> = (0..2 * 3 * 3).map(|i| i as f32 / 18.0).collect();
        let img = ImageTensor::new(2, 3, data).unwrap();
        let t = img.to_tensor(DType::F64, &Device::Cpu).unwrap();
        assert_eq!(t.dims4().unwrap(), (1, 3, 2, 3));
        let back = ImageTensor::from_tensor(&t).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn down_then_up_sampling_of_constant_is_identity() {
        let img = ImageTensor::filled(8, 8, 0.25).unwrap();
        let down = img.downsample(2).unwrap();
        assert_eq!(down.height(), 4);
        assert_eq!(down.upsample_nearest(2).unwrap(), img);
    }
}
