//! AP at a single IoU threshold and recall at 100 detections.
//!
//! Predictions are matched greedily in descending score order, each to the
//! unmatched ground-truth box of the same class with the highest IoU. AP is
//! the area under the all-point interpolated precision-recall curve, averaged
//! over classes that have ground truth.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::BoxSet;

pub const MAX_DETECTIONS: usize = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap50: f64,
    pub mar: f64,
}

/// Area under the precision envelope for hits (`true` = true positive) in
/// ranked order against `n_gt` ground-truth boxes.
pub fn average_precision(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(hits.len());
    for (i, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        points.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    // precision envelope, right to left
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &(r, p) in &points {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

struct Ranked {
    score: f64,
    image: usize,
    index: usize,
}

/// Ranked true/false-positive flags for class `class`, keeping at most
/// `per_image` top-scoring predictions of each image.
fn match_class(preds: &[BoxSet], gts: &[BoxSet], class: usize, iou_thresh: f64, per_image: usize) -> (Vec<bool>, usize) {
    let mut ranked = Vec::new();
    for (img, p) in preds.iter().enumerate() {
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p.scores()[b].total_cmp(&p.scores()[a]).then(a.cmp(&b)));
        order.truncate(per_image);
        ranked.extend(
            order
                .into_iter()
                .filter(|&i| p.label(i) == class)
                .map(|i| Ranked {
                    score: p.scores()[i],
                    image: img,
                    index: i,
                }),
        );
    }
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.image.cmp(&b.image)).then(a.index.cmp(&b.index)));

    let gt_idx: Vec<Vec<usize>> = gts
        .iter()
        .map(|g| (0..g.len()).filter(|&j| g.label(j) == class).collect())
        .collect();
    let n_gt = gt_idx.iter().map(Vec::len).sum();
    let mut used: Vec<Vec<bool>> = gt_idx.iter().map(|v| vec![false; v.len()]).collect();
    let hits = ranked
        .iter()
        .map(|r| {
            let pb = &preds[r.image].boxes()[r.index];
            let mut best: Option<(usize, f64)> = None;
            for (k, &j) in gt_idx[r.image].iter().enumerate() {
                if used[r.image][k] {
                    continue;
                }
                let iou = pb.iou(&gts[r.image].boxes()[j]);
                if iou >= iou_thresh && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((k, iou));
                }
            }
            match best {
                Some((k, _)) => {
                    used[r.image][k] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    (hits, n_gt)
}

pub fn evaluate_ap(predictions: &[BoxSet], ground_truth: &[BoxSet], iou_thresh: f64) -> Result<ApResult> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::Shape(format!(
            "{} prediction sets for {} images",
            predictions.len(),
            ground_truth.len()
        )));
    }
    if !(iou_thresh > 0.0 && iou_thresh < 1.0) {
        return Err(Error::InvalidArgument(format!("IoU threshold {iou_thresh} outside (0, 1)")));
    }
    let classes: BTreeSet<usize> = ground_truth
        .iter()
        .flat_map(|g| (0..g.len()).map(move |j| g.label(j)))
        .collect();
    if classes.is_empty() {
        return Ok(ApResult::default());
    }
    let (mut ap, mut ar) = (0.0, 0.0);
    for &c in &classes {
        let (hits, n_gt) = match_class(predictions, ground_truth, c, iou_thresh, usize::MAX);
        ap += average_precision(&hits, n_gt);
        let (hits, n_gt) = match_class(predictions, ground_truth, c, iou_thresh, MAX_DETECTIONS);
        ar += hits.iter().filter(|&&h| h).count() as f64 / n_gt as f64;
    }
    let k = classes.len() as f64;
    Ok(ApResult {
        ap50: ap / k,
        mar: ar / k,
    })
}

/// Runs `detector` over `samples` in batches and scores it at IoU 0.5.
pub fn evaluate_detector(detector: &crate::zoo::TinyDetector, samples: &[crate::data::DetectionSample]) -> Result<ApResult> {
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(32) {
        let images: Vec<&crate::image::Image> = chunk.iter().map(|s| &s.image).collect();
        preds.extend(detector.predict(&images));
    }
    let gts: Vec<BoxSet> = samples.iter().map(|s| s.ground_truth.clone()).collect();
    evaluate_ap(&preds, &gts, 0.5)
}
