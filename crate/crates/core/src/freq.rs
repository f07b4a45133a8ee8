//! Frequency-adaptive input enhancement and spectrum analysis.
//!
//! Images whose candidate boxes cover little area get Gaussian noise, which
//! pushes energy into high frequencies; images dominated by large objects get
//! a random crop resized back to full size, which concentrates energy near
//! DC. [`dft_spectrum`] measures both effects.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::config::DistillConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{stream, tag};
use crate::types::BoxSet;

/// Summed normalized area of boxes scoring at least `score_floor`.
/// Overlapping boxes count multiply, so the result may exceed 1.
pub fn area_of_boxes(boxes: &BoxSet, score_floor: f64) -> f64 {
    boxes
        .boxes()
        .iter()
        .zip(boxes.scores())
        .filter(|(_, &s)| s >= score_floor)
        .map(|(b, _)| b.area())
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    BigObjectCrop,
    SmallObjectNoise,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDecision {
    pub branch: Branch,
    pub area_fraction: f64,
}

pub fn select_augmentation(area_fraction: f64, lambda_thresh: f64) -> AugmentDecision {
    let branch = if area_fraction >= lambda_thresh {
        Branch::BigObjectCrop
    } else {
        Branch::SmallObjectNoise
    };
    AugmentDecision {
        branch,
        area_fraction,
    }
}

/// With probability `prob`, adds i.i.d. `N(0, σ²)` to every pixel channel and
/// clips to `[0, 1]`.
pub fn apply_gaussian_noise(image: &Image, sigma: f64, prob: f64, seed: u64) -> Image {
    let mut rng = stream(seed, &[tag::AUGMENT, 0]);
    if sigma <= 0.0 || !rng.random_bool(prob.clamp(0.0, 1.0)) {
        return image.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
    }
    out
}

/// Crops a window keeping a uniform fraction in `[min_keep, max_keep]` of
/// each side at a uniform position, then resizes it back to full size.
pub fn apply_random_crop(image: &Image, min_keep: f64, max_keep: f64, seed: u64) -> Result<Image> {
    if !(min_keep > 0.0 && min_keep <= max_keep && max_keep <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "crop keep range [{min_keep}, {max_keep}] must satisfy 0 < min ≤ max ≤ 1"
        )));
    }
    let mut rng = stream(seed, &[tag::AUGMENT, 1]);
    let (h, w) = (image.height() as f64, image.width() as f64);
    let kh = rng.random_range(min_keep..=max_keep);
    let kw = rng.random_range(min_keep..=max_keep);
    let y0 = rng.random_range(0.0..=h * (1.0 - kh));
    let x0 = rng.random_range(0.0..=w * (1.0 - kw));
    Ok(resample_window(image, y0, x0, kh, kw))
}

/// Bilinear sampling of the window `[y0, y0 + kh·H) × [x0, x0 + kw·W)` onto the
/// full `H×W` grid, with half-pixel centres.
fn resample_window(image: &Image, y0: f64, x0: f64, kh: f64, kw: f64) -> Image {
    let (h, w) = (image.height(), image.width());
    let axis = |o: usize, origin: f64, keep: f64, n: usize| {
        let src = (origin + (o as f64 + 0.5) * keep - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, src - lo as f64)
    };
    let rows: Vec<_> = (0..h).map(|y| axis(y, y0, kh, h)).collect();
    let cols: Vec<_> = (0..w).map(|x| axis(x, x0, kw, w)).collect();
    Image::from_fn(h, w, |y, x, c| {
        let (y_lo, y_hi, fy) = rows[y];
        let (x_lo, x_hi, fx) = cols[x];
        let top = image.get(y_lo, x_lo, c) * (1.0 - fx) + image.get(y_lo, x_hi, c) * fx;
        let bottom = image.get(y_hi, x_lo, c) * (1.0 - fx) + image.get(y_hi, x_hi, c) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Radial band edges as fractions of the Nyquist frequency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandEdges {
    pub low: f64,
    pub high: f64,
}

impl Default for BandEdges {
    fn default() -> Self {
        BandEdges { low: 0.125, high: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BandEnergies {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl BandEnergies {
    pub fn total(&self) -> f64 {
        self.low + self.mid + self.high
    }

    /// Each band's share of the total.
    pub fn fractions(&self) -> BandEnergies {
        let t = self.total();
        if t == 0.0 {
            return BandEnergies::default();
        }
        BandEnergies {
            low: self.low / t,
            mid: self.mid / t,
            high: self.high / t,
        }
    }
}

/// Power spectrum of a grayscale image, scaled so it sums to the spatial
/// energy `Σ x²`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    /// `|X|² / (H·W)`, row-major, DC at `(H/2, W/2)`.
    pub magnitude: Vec<f64>,
    pub total_energy: f64,
    pub bands: BandEnergies,
}

impl Spectrum {
    /// `ln(1 + magnitude)`, for display.
    pub fn log_magnitude(&self) -> Vec<f64> {
        self.magnitude.iter().map(|m| m.ln_1p()).collect()
    }
}

fn fft2(buf: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(buf);
    let mut column = vec![Complex::default(); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}

/// Signed frequency of DFT bin `k` in units of Nyquist.
fn normalized_freq(k: usize, n: usize) -> f64 {
    let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    signed / (n as f64 / 2.0)
}

pub fn dft_spectrum(gray: &[f64], height: usize, width: usize) -> Result<Spectrum> {
    dft_spectrum_with(gray, height, width, BandEdges::default())
}

pub fn dft_spectrum_with(gray: &[f64], height: usize, width: usize, edges: BandEdges) -> Result<Spectrum> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidArgument(format!(
            "spectrum needs at least 2×2 pixels, got {height}×{width}"
        )));
    }
    if gray.len() != height * width {
        return Err(Error::Shape(format!(
            "{} pixels for a {height}×{width} image",
            gray.len()
        )));
    }
    let mut buf: Vec<Complex<f64>> = gray.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut buf, height, width, false);
    let scale = 1.0 / (height * width) as f64;
    let mut magnitude = vec![0.0; height * width];
    let mut bands = BandEnergies::default();
    for ky in 0..height {
        let fy = normalized_freq(ky, height);
        for kx in 0..width {
            let fx = normalized_freq(kx, width);
            let p = buf[ky * width + kx].norm_sqr() * scale;
            let r = (fy * fy + fx * fx).sqrt();
            if r < edges.low {
                bands.low += p;
            } else if r < edges.high {
                bands.mid += p;
            } else {
                bands.high += p;
            }
            let cy = (ky + height / 2) % height;
            let cx = (kx + width / 2) % width;
            magnitude[cy * width + cx] = p;
        }
    }
    Ok(Spectrum {
        height,
        width,
        total_energy: magnitude.iter().sum(),
        magnitude,
        bands,
    })
}

/// Spectrum of an RGB image's luminance.
pub fn image_spectrum(image: &Image) -> Result<Spectrum> {
    dft_spectrum(&image.luminance(), image.height(), image.width())
}

/// Chooses and applies the augmentation for one image from the candidate
/// boxes of the previous stage's teacher.
pub fn enhance_input(image: &Image, boxes: &BoxSet, cfg: &DistillConfig, seed: u64) -> Result<(Image, AugmentDecision)> {
    let area = area_of_boxes(boxes, cfg.augment.score_floor);
    let decision = select_augmentation(area, cfg.lambda_thresh);
    let out = match decision.branch {
        Branch::SmallObjectNoise => apply_gaussian_noise(image, cfg.sigma, cfg.augment.noise_prob, seed),
        Branch::BigObjectCrop => {
            apply_random_crop(image, cfg.augment.crop_min_keep, cfg.augment.crop_max_keep, seed)?
        }
    };
    Ok((out, decision))
}

/// Zero-mean, unit-variance random field with a `1/f` amplitude spectrum,
/// the power law of natural images.
pub fn one_over_f_field(height: usize, width: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, &[tag::DATA, 0x1f]);
    let mut buf = vec![Complex::default(); height * width];
    for ky in 0..height {
        let fy = normalized_freq(ky, height);
        for kx in 0..width {
            let fx = normalized_freq(kx, width);
            let r = (fy * fy + fx * fx).sqrt();
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            if r > 0.0 {
                buf[ky * width + kx] = Complex::from_polar(1.0 / r, phase);
            }
        }
    }
    fft2(&mut buf, height, width, true);
    let re: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let n = re.len() as f64;
    let mean = re.iter().sum::<f64>() / n;
    let sd = (re.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    re.iter().map(|v| (v - mean) / sd).collect()
}

/// A tinted `1/f` texture with intensities around mid-gray.
pub fn one_over_f_image(height: usize, width: usize, seed: u64) -> Image {
    let field = one_over_f_field(height, width, seed);
    let mut rng = stream(seed, &[tag::DATA, 0x1f, 1]);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.35..0.65));
    let contrast = rng.random_range(0.08..0.14);
    Image::from_fn(height, width, |y, x, c| {
        (base[c] + contrast * field[y * width + x]).clamp(0.0, 1.0)
    })
}
