//! Feature maps, pyramids and box sets shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One pyramid level: a `C×H×W` activation array.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub level_id: usize,
    data: Tensor,
}

impl FeatureMap {
    pub fn new(level_id: usize, data: Tensor) -> Result<Self> {
        let s = data.shape();
        if s.len() != 3 || s.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "feature map must be C×H×W with every extent ≥ 1, got {s:?}"
            )));
        }
        if !data.all_finite() {
            return Err(Error::NonFinite(format!("feature map level {level_id}")));
        }
        Ok(FeatureMap { level_id, data })
    }

    pub fn from_fn(level_id: usize, c: usize, h: usize, w: usize, f: impl FnMut(usize) -> f64) -> Result<Self> {
        Self::new(level_id, Tensor::from_fn(&[c, h, w], f))
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// `N_l = C·H·W`.
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The map as a `[1, C, H, W]` batch.
    pub fn as_batch(&self) -> Tensor {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        self.data.clone().reshape(&[1, c, h, w])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Teacher,
    Student,
}

/// Ordered FPN outputs, finest level first.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<FeatureMap>,
    pub source: Source,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<FeatureMap>, source: Source) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Shape("pyramid needs at least one level".into()));
        }
        for (i, l) in levels.iter().enumerate() {
            if l.level_id != i {
                return Err(Error::Shape(format!(
                    "level {i} carries level_id {}",
                    l.level_id
                )));
            }
        }
        for pair in levels.windows(2) {
            if pair[1].height() > pair[0].height() || pair[1].width() > pair[0].width() {
                return Err(Error::Shape(format!(
                    "level {} is larger than level {}",
                    pair[1].level_id, pair[0].level_id
                )));
            }
        }
        Ok(FeaturePyramid { levels, source })
    }

    /// Builds a pyramid from per-level tensors, numbering levels in order.
    pub fn from_tensors(tensors: Vec<Tensor>, source: Source) -> Result<Self> {
        let levels = tensors
            .into_iter()
            .enumerate()
            .map(|(i, t)| FeatureMap::new(i, t))
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels, source)
    }

    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }

    pub fn level(&self, id: usize) -> Option<&FeatureMap> {
        self.levels.get(id)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Axis-aligned box in normalized `[0, 1]` image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidArgument(format!(
                "degenerate box ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let ih = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

/// Scored (and optionally labelled) boxes for one image.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    boxes: Vec<BBox>,
    scores: Vec<f64>,
    labels: Vec<usize>,
    /// `(height, width)` in pixels.
    pub image_size: (usize, usize),
}

impl BoxSet {
    pub fn empty(image_size: (usize, usize)) -> Self {
        BoxSet {
            image_size,
            ..Default::default()
        }
    }

    /// `labels` may be empty (class-agnostic) or match `boxes` in length.
    pub fn new(boxes: Vec<BBox>, scores: Vec<f64>, labels: Vec<usize>, image_size: (usize, usize)) -> Result<Self> {
        if boxes.len() != scores.len() {
            return Err(Error::Shape(format!(
                "{} boxes but {} scores",
                boxes.len(),
                scores.len()
            )));
        }
        if !labels.is_empty() && labels.len() != boxes.len() {
            return Err(Error::Shape(format!(
                "{} boxes but {} labels",
                boxes.len(),
                labels.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidArgument(format!("score {s} outside [0, 1]")));
        }
        Ok(BoxSet {
            boxes,
            scores,
            labels,
            image_size,
        })
    }

    pub fn push(&mut self, b: BBox, score: f64, label: Option<usize>) {
        self.boxes.push(b);
        self.scores.push(score.clamp(0.0, 1.0));
        if let Some(l) = label {
            self.labels.push(l);
        }
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.boxes
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Label of box `i`; unlabelled sets report class 0.
    pub fn label(&self, i: usize) -> usize {
        self.labels.get(i).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}
