//! Files in and out: PNG images, annotated datasets, text artifacts.

use std::path::{Path, PathBuf};

use dfmsd::data::{export_coco, load_coco_annotations, DetectionSample};
use dfmsd::image::Image;
use dfmsd::{Error, Result};
use image::imageops::FilterType;
use image::{GrayImage, RgbImage};

fn image_error(path: &Path, e: image::ImageError) -> Error {
    Error::Parse {
        what: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Reads any supported image as RGB, optionally resized to `size × size`.
pub fn load_image(path: &Path, size: Option<usize>) -> Result<Image> {
    let mut rgb = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
    if let Some(s) = size {
        if rgb.dimensions() != (s as u32, s as u32) {
            rgb = image::imageops::resize(&rgb, s as u32, s as u32, FilterType::Triangle);
        }
    }
    let (w, h) = rgb.dimensions();
    Image::from_rgb8(h as usize, w as usize, rgb.as_raw())
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8())
        .expect("buffer matches dimensions");
    buf.save(path).map_err(|e| image_error(path, e))
}

/// Writes `values` (row-major, any range) as an 8-bit grayscale PNG stretched
/// to the full range and upscaled by `scale` with nearest-neighbour.
pub fn save_gray(path: &Path, values: &[f64], height: usize, width: usize, scale: u32) -> Result<()> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px: Vec<u8> = values
        .iter()
        .map(|&v| ((v - lo) / span * 255.0).round() as u8)
        .collect();
    let img = GrayImage::from_raw(width as u32, height as u32, px).expect("buffer matches dimensions");
    let img = image::imageops::resize(&img, width as u32 * scale, height as u32 * scale, FilterType::Nearest);
    img.save(path).map_err(|e| image_error(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// The annotation document of a dataset given either as the document itself
/// or as a directory holding `annotations.json`.
pub fn annotation_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("annotations.json")
    } else {
        data.to_path_buf()
    }
}

/// Loads a COCO-style dataset; image files are resolved against the
/// document's directory and resized to `size × size`.
pub fn load_coco_samples(data: &Path, size: usize) -> Result<Vec<DetectionSample>> {
    let doc = annotation_path(data);
    let ds = load_coco_annotations(&doc)?;
    let root = doc.parent().unwrap_or(Path::new("."));
    ds.images
        .into_iter()
        .map(|a| {
            let image = load_image(&root.join(&a.file_name), Some(size))?;
            let mut gt = a.ground_truth;
            gt.image_size = (size, size);
            DetectionSample::new(image, gt)
        })
        .collect()
}

/// Writes `samples` as `images/NNNN.png` plus `annotations.json` under `dir`.
pub fn export_dataset(samples: &[DetectionSample], dir: &Path) -> Result<Vec<PathBuf>> {
    let img_dir = dir.join("images");
    ensure_dir(&img_dir)?;
    let names: Vec<String> = (0..samples.len()).map(|i| format!("images/{i:04}.png")).collect();
    let mut written = Vec::with_capacity(samples.len() + 1);
    for (s, name) in samples.iter().zip(&names) {
        let p = dir.join(name);
        save_image(&p, &s.image)?;
        written.push(p);
    }
    let doc = export_coco(samples, &names);
    let path = dir.join("annotations.json");
    let json = serde_json::to_string_pretty(&doc).map_err(|e| Error::Parse {
        what: "annotation export".into(),
        message: e.to_string(),
    })?;
    write_text(&path, &json)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dfmsd::data::synth_dataset;

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synth_dataset(4, 32, 0.5, 2).unwrap();
        let written = export_dataset(&samples, dir.path()).unwrap();
        assert_eq!(written.len(), 5);
        let back = load_coco_samples(dir.path(), 32).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.ground_truth.len(), b.ground_truth.len());
            for (x, y) in a.ground_truth.boxes().iter().zip(b.ground_truth.boxes()) {
                assert!((x.x_min - y.x_min).abs() < 1e-9 && (x.y_max - y.y_max).abs() < 1e-9);
            }
            // 8-bit quantization
            let err = a.image.data().iter().zip(b.image.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn resizes_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        image::RgbImage::from_pixel(20, 10, image::Rgb([10, 20, 30])).save(&p).unwrap();
        let img = load_image(&p, Some(16)).unwrap();
        assert_eq!((img.height(), img.width()), (16, 16));
        let raw = load_image(&p, None).unwrap();
        assert_eq!((raw.height(), raw.width()), (10, 20));
    }
}
