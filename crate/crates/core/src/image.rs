//! RGB images with `f64` intensities in `[0, 1]`, stored `H×W×3`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Rec. 601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{height}×{width}×3 image needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    /// `f(y, x, channel)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Image {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image {
            height,
            width,
            data: vec![value; height * width * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    /// Channel-first `[3, H, W]` copy for the network.
    pub fn to_chw(&self) -> Tensor {
        let (h, w) = (self.height, self.width);
        Tensor::from_fn(&[3, h, w], |i| {
            let c = i / (h * w);
            let p = i % (h * w);
            self.data[p * 3 + c]
        })
    }

    /// Luminance plane, row-major `H×W`.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|px| LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2])
            .collect()
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, |y, x, c| {
            self.get(y, self.width - 1 - x, c)
        })
    }

    /// Quantizes to 8-bit RGB, row-major.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Image::new(
            height,
            width,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }
}

/// Stacks images into a `[N, 3, H, W]` batch.
pub fn batch(images: &[&Image]) -> Tensor {
    let planes: Vec<Tensor> = images.iter().map(|im| im.to_chw()).collect();
    Tensor::stack(&planes)
}
