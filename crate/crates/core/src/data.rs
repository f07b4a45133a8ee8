//! Detection data: a synthetic shapes dataset and COCO-style annotations.
//!
//! Synthetic images put colored squares, discs and triangles on `1/f`
//! textures. Each image is either small-object dominated (summed box area
//! below 0.5) or large-object dominated (at least 0.5), so both augmentation
//! branches get exercised.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq::one_over_f_image;
use crate::image::Image;
use crate::rng::{derive_seed, stream, tag};
use crate::types::{BBox, BoxSet};

pub const CLASS_NAMES: [&str; 3] = ["square", "disc", "triangle"];

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionSample {
    pub image: Image,
    pub ground_truth: BoxSet,
}

impl DetectionSample {
    pub fn new(image: Image, ground_truth: BoxSet) -> Result<Self> {
        for b in ground_truth.boxes() {
            if b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > 1.0 || b.y_max > 1.0 {
                return Err(Error::InvalidArgument(format!("box {b:?} outside the image")));
            }
        }
        Ok(DetectionSample {
            image,
            ground_truth,
        })
    }

    pub fn gt_area(&self) -> f64 {
        self.ground_truth.boxes().iter().map(BBox::area).sum()
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Square,
    Disc,
    Triangle,
}

impl Shape {
    fn from_label(label: usize) -> Shape {
        match label {
            0 => Shape::Square,
            1 => Shape::Disc,
            _ => Shape::Triangle,
        }
    }

    /// Whether the point `(u, v)` in the unit box of the shape is inside it.
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Square => true,
            Shape::Disc => (u - 0.5).powi(2) + (v - 0.5).powi(2) <= 0.25,
            Shape::Triangle => (u - 0.5).abs() <= 0.5 * v,
        }
    }
}

/// Base colour per class, jittered per object.
const CLASS_COLORS: [[f64; 3]; 3] = [[0.9, 0.2, 0.15], [0.15, 0.85, 0.25], [0.2, 0.3, 0.95]];

fn draw<R: Rng>(image: &mut Image, label: usize, b: &BBox, rng: &mut R) {
    let shape = Shape::from_label(label);
    let color: [f64; 3] =
        std::array::from_fn(|c| (CLASS_COLORS[label][c] + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0));
    let (h, w) = (image.height() as f64, image.width() as f64);
    let (bw, bh) = (b.x_max - b.x_min, b.y_max - b.y_min);
    for y in (b.y_min * h).floor() as usize..((b.y_max * h).ceil() as usize).min(image.height()) {
        for x in (b.x_min * w).floor() as usize..((b.x_max * w).ceil() as usize).min(image.width()) {
            let u = ((x as f64 + 0.5) / w - b.x_min) / bw;
            let v = ((y as f64 + 0.5) / h - b.y_min) / bh;
            if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) && shape.contains(u, v) {
                for (c, &col) in color.iter().enumerate() {
                    image.set(y, x, c, col);
                }
            }
        }
    }
}

fn place<R: Rng>(side: f64, rng: &mut R) -> BBox {
    let x0 = rng.random_range(0.0..=1.0 - side);
    let y0 = rng.random_range(0.0..=1.0 - side);
    BBox::new(x0, y0, x0 + side, y0 + side).expect("positive side")
}

/// One synthetic image; `small` picks the small-object regime.
pub fn synth_sample(image_size: usize, small: bool, seed: u64) -> DetectionSample {
    let mut rng = stream(seed, &[tag::DATA, 1]);
    let mut image = one_over_f_image(image_size, image_size, derive_seed(seed, &[tag::DATA, 2]));
    let mut gt = BoxSet::empty((image_size, image_size));
    let mut objects = Vec::new();
    if small {
        // at most 3 objects of side ≤ 0.3: summed area ≤ 0.27
        for _ in 0..rng.random_range(1..=3) {
            objects.push(rng.random_range(0.15..=0.3));
        }
    } else {
        // one object of side ≥ 0.72 already covers ≥ 0.518
        objects.push(rng.random_range(0.72..=0.95));
        if rng.random_bool(0.5) {
            objects.push(rng.random_range(0.15..=0.3));
        }
    }
    for side in objects {
        let label = rng.random_range(0..CLASS_NAMES.len());
        let b = place(side, &mut rng);
        draw(&mut image, label, &b, &mut rng);
        gt.push(b, 1.0, Some(label));
    }
    DetectionSample {
        image,
        ground_truth: gt,
    }
}

/// `n` synthetic samples; each is small-object dominated with probability
/// `size_mix`.
pub fn synth_dataset(n: usize, image_size: usize, size_mix: f64, seed: u64) -> Result<Vec<DetectionSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one image".into()));
    }
    if !(0.0..=1.0).contains(&size_mix) {
        return Err(Error::InvalidArgument(format!("size_mix {size_mix} outside [0, 1]")));
    }
    if image_size < 8 {
        return Err(Error::InvalidArgument(format!("image size {image_size} below 8")));
    }
    let mut rng = stream(seed, &[tag::DATA, 0]);
    let regimes: Vec<bool> = (0..n).map(|_| rng.random_bool(size_mix)).collect();
    use rayon::prelude::*;
    Ok(regimes
        .into_par_iter()
        .enumerate()
        .map(|(i, small)| synth_sample(image_size, small, derive_seed(seed, &[tag::DATA, 3, i as u64])))
        .collect())
}

/// Training and held-out synthetic splits described by `cfg`.
pub fn synthetic_splits(cfg: &crate::config::DataConfig) -> Result<(Vec<DetectionSample>, Vec<DetectionSample>)> {
    let train = synth_dataset(
        cfg.synthetic_images,
        cfg.image_size,
        cfg.size_mix,
        derive_seed(cfg.seed, &[tag::DATA, 10]),
    )?;
    let eval = synth_dataset(
        cfg.eval_images,
        cfg.image_size,
        cfg.size_mix,
        derive_seed(cfg.seed, &[tag::DATA, 11]),
    )?;
    Ok((train, eval))
}

#[derive(Debug, Deserialize, Serialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct CocoAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, width, height]` in pixels.
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iscrowd: Option<u8>,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct CocoDocument {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

/// Ground truth for one annotated image whose pixels live in `file_name`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedImage {
    pub file_name: String,
    pub ground_truth: BoxSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CocoDataset {
    pub images: Vec<AnnotatedImage>,
    /// Category names in label order.
    pub categories: Vec<String>,
    /// Zero-area boxes that were skipped.
    pub skipped_boxes: usize,
}

pub fn parse_coco(text: &str) -> Result<CocoDataset> {
    let doc: CocoDocument =
        serde_json::from_str(text).map_err(|e| Error::Annotations(e.to_string()))?;
    let cats: BTreeMap<u64, &str> = doc.categories.iter().map(|c| (c.id, c.name.as_str())).collect();
    let label_of: HashMap<u64, usize> = cats.keys().enumerate().map(|(i, &id)| (id, i)).collect();
    let index_of: HashMap<u64, usize> = doc.images.iter().enumerate().map(|(i, im)| (im.id, i)).collect();
    let mut images: Vec<AnnotatedImage> = doc
        .images
        .iter()
        .map(|im| AnnotatedImage {
            file_name: im.file_name.clone(),
            ground_truth: BoxSet::empty((im.height, im.width)),
        })
        .collect();
    let mut skipped = 0;
    for a in &doc.annotations {
        let &idx = index_of
            .get(&a.image_id)
            .ok_or_else(|| Error::Annotations(format!("annotation refers to unknown image {}", a.image_id)))?;
        let &label = label_of
            .get(&a.category_id)
            .ok_or_else(|| Error::Annotations(format!("annotation refers to unknown category {}", a.category_id)))?;
        let meta = &doc.images[idx];
        let [x, y, bw, bh] = a.bbox;
        if !(bw > 0.0 && bh > 0.0) {
            skipped += 1;
            continue;
        }
        let (w, h) = (meta.width as f64, meta.height as f64);
        let b = BBox::new(
            (x / w).clamp(0.0, 1.0),
            (y / h).clamp(0.0, 1.0),
            ((x + bw) / w).clamp(0.0, 1.0),
            ((y + bh) / h).clamp(0.0, 1.0),
        );
        match b {
            Ok(b) => images[idx].ground_truth.push(b, 1.0, Some(label)),
            Err(_) => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} zero-area boxes");
    }
    Ok(CocoDataset {
        images,
        categories: cats.values().map(|s| s.to_string()).collect(),
        skipped_boxes: skipped,
    })
}

pub fn load_coco_annotations(path: &Path) -> Result<CocoDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_coco(&text)
}

/// Annotation document for `samples`, whose images are stored as `file_names`.
pub fn export_coco(samples: &[DetectionSample], file_names: &[String]) -> CocoDocument {
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for (i, (s, name)) in samples.iter().zip(file_names).enumerate() {
        let (h, w) = (s.image.height(), s.image.width());
        images.push(CocoImage {
            id: i as u64,
            file_name: name.clone(),
            width: w,
            height: h,
        });
        for (j, b) in s.ground_truth.boxes().iter().enumerate() {
            let bbox = [
                b.x_min * w as f64,
                b.y_min * h as f64,
                (b.x_max - b.x_min) * w as f64,
                (b.y_max - b.y_min) * h as f64,
            ];
            annotations.push(CocoAnnotation {
                id: Some(annotations.len() as u64),
                image_id: i as u64,
                category_id: s.ground_truth.label(j) as u64,
                bbox,
                area: Some(bbox[2] * bbox[3]),
                iscrowd: Some(0),
            });
        }
    }
    CocoDocument {
        images,
        annotations,
        categories: CLASS_NAMES
            .iter()
            .enumerate()
            .map(|(id, n)| CocoCategory {
                id: id as u64,
                name: n.to_string(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_mix_extremes() {
        for s in synth_dataset(30, 64, 0.0, 1).unwrap() {
            assert!(s.gt_area() >= 0.5);
        }
        for s in synth_dataset(30, 64, 1.0, 1).unwrap() {
            assert!(s.gt_area() < 0.5);
        }
    }

    #[test]
    fn dataset_is_seeded() {
        let a = synth_dataset(5, 32, 0.5, 9).unwrap();
        let b = synth_dataset(5, 32, 0.5, 9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.to_rgb8(), y.image.to_rgb8());
            assert_eq!(x.ground_truth, y.ground_truth);
        }
        let c = synth_dataset(5, 32, 0.5, 10).unwrap();
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn boxes_in_bounds_and_labelled() {
        for s in synth_dataset(40, 64, 0.5, 3).unwrap() {
            assert!(DetectionSample::new(s.image.clone(), s.ground_truth.clone()).is_ok());
            assert!(!s.ground_truth.is_empty());
            for i in 0..s.ground_truth.len() {
                assert!(s.ground_truth.label(i) < CLASS_NAMES.len());
            }
        }
    }

    #[test]
    fn invalid_dataset_args() {
        assert!(synth_dataset(0, 64, 0.5, 0).is_err());
        assert!(synth_dataset(1, 64, 1.5, 0).is_err());
    }

    #[test]
    fn out_of_bounds_sample_rejected() {
        let mut gt = BoxSet::empty((8, 8));
        gt.push(BBox::new(0.5, 0.5, 1.2, 0.9).unwrap(), 1.0, Some(0));
        assert!(DetectionSample::new(Image::filled(8, 8, 0.0), gt).is_err());
    }

    const DOC: &str = r#"{
        "images": [{"id": 7, "file_name": "a.png", "width": 100, "height": 100}],
        "annotations": [
            {"image_id": 7, "category_id": 3, "bbox": [10, 10, 20, 20]},
            {"image_id": 7, "category_id": 3, "bbox": [5, 5, 0, 10]}
        ],
        "categories": [{"id": 3, "name": "thing"}]
    }"#;

    #[test]
    fn coco_conversion_and_skip_count() {
        let d = parse_coco(DOC).unwrap();
        assert_eq!(d.skipped_boxes, 1);
        let gt = &d.images[0].ground_truth;
        assert_eq!(gt.len(), 1);
        let b = gt.boxes()[0];
        for (got, want) in [(b.x_min, 0.1), (b.y_min, 0.1), (b.x_max, 0.3), (b.y_max, 0.3)] {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(d.categories, vec!["thing".to_string()]);
    }

    #[test]
    fn coco_empty_and_errors() {
        let empty = r#"{"images": [], "annotations": [], "categories": []}"#;
        assert!(parse_coco(empty).unwrap().images.is_empty());
        assert!(parse_coco(r#"{"images": []}"#).is_err());
        let orphan = r#"{"images": [], "annotations": [{"image_id": 1, "category_id": 0, "bbox": [0,0,1,1]}], "categories": [{"id": 0, "name": "x"}]}"#;
        assert!(parse_coco(orphan).is_err());
    }

    #[test]
    fn export_round_trips() {
        let samples = synth_dataset(4, 32, 0.5, 2).unwrap();
        let names: Vec<String> = (0..4).map(|i| format!("{i}.png")).collect();
        let text = serde_json::to_string(&export_coco(&samples, &names)).unwrap();
        let back = parse_coco(&text).unwrap();
        for (s, a) in samples.iter().zip(&back.images) {
            assert_eq!(s.ground_truth.len(), a.ground_truth.len());
            for (x, y) in s.ground_truth.boxes().iter().zip(a.ground_truth.boxes()) {
                assert!((x.x_min - y.x_min).abs() < 1e-12 && (x.y_max - y.y_max).abs() < 1e-12);
            }
        }
    }
}
