//! Tiny one-stage detectors: SiLU conv backbone, top-down FPN and a shared
//! head with either anchor-free or anchor-based box parametrisation.
//!
//! The backbone is a stride-2 stem followed by `fpn_levels + 1` stride-2
//! stages; the last `fpn_levels` stage outputs feed the FPN, so a 64×64 input
//! with three levels yields 8×8, 4×4 and 2×2 maps (strides 8, 16, 32).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::{batch, Image};
use crate::nn::{Conv2d, ParamStore};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;
use crate::types::{BBox, BoxSet, FeaturePyramid, Source};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadStyle {
    /// Per-cell distances to the four box sides, in units of the stride.
    AnchorFree,
    /// One square anchor of side `2·stride` per cell; offsets and log-scales.
    AnchorBased,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TinyDetectorSpec {
    pub width_multiplier: f64,
    /// Residual blocks per backbone stage; length `fpn_levels + 1`.
    pub depth: Vec<usize>,
    pub fpn_levels: usize,
    pub num_classes: usize,
    pub head: HeadStyle,
}

impl Default for TinyDetectorSpec {
    fn default() -> Self {
        Self::student()
    }
}

impl TinyDetectorSpec {
    pub fn student() -> Self {
        TinyDetectorSpec {
            width_multiplier: 1.0,
            depth: vec![0, 1, 1, 1],
            fpn_levels: 3,
            num_classes: 3,
            head: HeadStyle::AnchorFree,
        }
    }

    /// Human-readable invariant violations; empty when the spec is valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            out.push(format!(
                "width_multiplier must be positive, got {}",
                self.width_multiplier
            ));
        }
        if self.fpn_levels == 0 {
            out.push("fpn_levels must be ≥ 1".into());
        }
        if self.depth.len() != self.fpn_levels + 1 {
            out.push(format!(
                "depth needs {} entries (fpn_levels + 1), got {}",
                self.fpn_levels + 1,
                self.depth.len()
            ));
        }
        if self.num_classes == 0 {
            out.push("num_classes must be ≥ 1".into());
        }
        out
    }

    fn ch(&self, base: f64) -> usize {
        ((base * self.width_multiplier).round() as usize).max(1)
    }

    pub fn fpn_channels(&self) -> usize {
        self.ch(16.0)
    }

    /// Stride of each pyramid level, finest first.
    pub fn strides(&self) -> Vec<usize> {
        (0..self.fpn_levels).map(|l| 1 << (l + 3)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Stage {
    down: Conv2d,
    blocks: Vec<Conv2d>,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    stem: Conv2d,
    stages: Vec<Stage>,
    lateral: Vec<Conv2d>,
    smooth: Vec<Conv2d>,
    head_conv: Conv2d,
    cls: Conv2d,
    reg: Conv2d,
}

/// Focal-loss prior for the initial classification bias.
const PRIOR_PROB: f64 = 0.01;
const FOCAL_ALPHA: f64 = 0.25;
pub const SCORE_THRESHOLD: f64 = 0.05;
const NMS_IOU: f64 = 0.5;
pub const MAX_DETECTIONS: usize = 100;

impl Layout {
    fn build<R: Rng>(spec: &TinyDetectorSpec, store: &mut ParamStore, rng: &mut R) -> Self {
        let stem_c = spec.ch(8.0);
        let stem = Conv2d::new(store, "stem", 3, stem_c, 3, 2, rng);
        let mut stages = Vec::new();
        let mut in_c = stem_c;
        for (k, &blocks) in spec.depth.iter().enumerate() {
            let c = spec.ch(8.0 * (k as f64 + 1.0));
            let down = Conv2d::new(store, &format!("stage{k}.down"), in_c, c, 3, 2, rng);
            let blocks = (0..blocks)
                .map(|b| Conv2d::new(store, &format!("stage{k}.block{b}"), c, c, 3, 1, rng))
                .collect();
            stages.push(Stage { down, blocks });
            in_c = c;
        }
        let f = spec.fpn_channels();
        let first = stages.len() - spec.fpn_levels;
        let mut lateral = Vec::new();
        let mut smooth = Vec::new();
        for l in 0..spec.fpn_levels {
            let c = spec.ch(8.0 * (first + l) as f64 + 8.0);
            lateral.push(Conv2d::new(store, &format!("fpn.lateral{l}"), c, f, 1, 1, rng));
            smooth.push(Conv2d::new(store, &format!("fpn.smooth{l}"), f, f, 3, 1, rng));
        }
        let head_conv = Conv2d::new(store, "head.conv", f, f, 3, 1, rng);
        let cls = Conv2d::new(store, "head.cls", f, spec.num_classes, 3, 1, rng);
        let reg = Conv2d::new(store, "head.reg", f, 4, 3, 1, rng);
        let prior = -((1.0 - PRIOR_PROB) / PRIOR_PROB).ln();
        if let Some(b) = cls.bias {
            store.get_mut(b).data_mut().fill(prior);
        }
        Layout {
            stem,
            stages,
            lateral,
            smooth,
            head_conv,
            cls,
            reg,
        }
    }
}

/// Forward-pass handles for one batch.
pub struct DetectorOutput {
    /// FPN outputs, `[N, F, H_l, W_l]`, finest first.
    pub pyramid: Vec<Var>,
    /// Per-level `(class logits [N, K, H, W], box regression [N, 4, H, W])`.
    pub heads: Vec<(Var, Var)>,
    /// Input `(height, width)` in pixels.
    pub image_size: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct TinyDetector {
    spec: TinyDetectorSpec,
    pub params: ParamStore,
    layout: Layout,
}

/// Builds a detector with parameters drawn from `seed`.
pub fn make_detector(spec: &TinyDetectorSpec, seed: u64) -> Result<TinyDetector> {
    let problems = spec.problems();
    if !problems.is_empty() {
        return Err(Error::InvalidArgument(problems.join("; ")));
    }
    let mut rng = stream(seed, &[tag::INIT]);
    let mut params = ParamStore::new();
    let layout = Layout::build(spec, &mut params, &mut rng);
    Ok(TinyDetector {
        spec: spec.clone(),
        params,
        layout,
    })
}

impl TinyDetector {
    /// Rebuilds a detector around previously saved parameters.
    pub fn from_params(spec: &TinyDetectorSpec, params: ParamStore) -> Result<Self> {
        let mut det = make_detector(spec, 0)?;
        let compatible = det.params.len() == params.len()
            && det.params.ids().all(|id| {
                det.params.name(id) == params.name(id)
                    && det.params.get(id).shape() == params.get(id).shape()
            });
        if !compatible {
            return Err(Error::Checkpoint(
                "parameters do not match the detector spec".into(),
            ));
        }
        det.params = params;
        Ok(det)
    }

    pub fn spec(&self) -> &TinyDetectorSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn fpn_channels(&self) -> usize {
        self.spec.fpn_channels()
    }

    /// FPN features only.
    pub fn pyramid(&self, g: &mut Graph, images: Var) -> Vec<Var> {
        self.pyramid_with(g, &self.params, images)
    }

    /// [`Self::pyramid`] reading parameters from `p` (same layout as `self.params`).
    pub fn pyramid_with(&self, g: &mut Graph, p: &ParamStore, images: Var) -> Vec<Var> {
        let lay = &self.layout;
        let x = lay.stem.forward(g, p, images);
        let mut x = g.silu(x);
        let mut stage_outs = Vec::new();
        for st in &lay.stages {
            let d = st.down.forward(g, p, x);
            x = g.silu(d);
            for b in &st.blocks {
                let y = b.forward(g, p, x);
                let y = g.silu(y);
                x = g.add(x, y);
            }
            stage_outs.push(x);
        }
        let first = stage_outs.len() - self.spec.fpn_levels;
        let mut lat: Vec<Var> = stage_outs[first..]
            .iter()
            .zip(&lay.lateral)
            .map(|(&f, conv)| conv.forward(g, p, f))
            .collect();
        for l in (0..lat.len().saturating_sub(1)).rev() {
            let (_, _, h, w) = dims(g, lat[l]);
            let (_, _, hc, wc) = dims(g, lat[l + 1]);
            let up = if hc * 2 == h && wc * 2 == w {
                g.upsample_nearest(lat[l + 1], 2)
            } else {
                g.resize_bilinear(lat[l + 1], h, w)
            };
            lat[l] = g.add(lat[l], up);
        }
        lat.iter()
            .zip(&lay.smooth)
            .map(|(&f, conv)| conv.forward(g, p, f))
            .collect()
    }

    /// Head outputs for one pyramid level.
    pub fn head(&self, g: &mut Graph, level: Var) -> (Var, Var) {
        self.head_with(g, &self.params, level)
    }

    pub fn head_with(&self, g: &mut Graph, p: &ParamStore, level: Var) -> (Var, Var) {
        let h = self.layout.head_conv.forward(g, p, level);
        let h = g.silu(h);
        (
            self.layout.cls.forward(g, p, h),
            self.layout.reg.forward(g, p, h),
        )
    }

    pub fn forward(&self, g: &mut Graph, images: Var) -> DetectorOutput {
        self.forward_with(g, &self.params, images)
    }

    pub fn forward_with(&self, g: &mut Graph, p: &ParamStore, images: Var) -> DetectorOutput {
        let pyramid = self.pyramid_with(g, p, images);
        let heads = pyramid.iter().map(|&f| self.head_with(g, p, f)).collect();
        let s = g.shape(images);
        DetectorOutput {
            pyramid,
            heads,
            image_size: (s[2], s[3]),
        }
    }

    /// Focal classification plus L1 box regression, normalized by the number
    /// of positive cells.
    pub fn gt_loss(&self, g: &mut Graph, out: &DetectorOutput, gts: &[&BoxSet]) -> Var {
        let shapes: Vec<(usize, usize)> = out
            .heads
            .iter()
            .map(|&(c, _)| {
                let (_, _, h, w) = dims(g, c);
                (h, w)
            })
            .collect();
        let targets = build_targets(&self.spec, gts, out.image_size, &shapes);
        let npos: f64 = targets.iter().map(|t| t.pos.sum()).sum();
        let norm = 1.0 / npos.max(1.0);
        let mut terms = Vec::new();
        for (&(cls, reg), t) in out.heads.iter().zip(&targets) {
            terms.push(focal_loss(g, cls, &t.cls));
            let tgt = g.constant(t.boxes.clone());
            let pos = g.constant(t.pos.clone());
            let diff = g.sub(reg, tgt);
            let a = g.abs(diff);
            let masked = g.mul(a, pos);
            terms.push(g.sum(masked));
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t);
        }
        g.scale(total, norm)
    }

    /// Runs the network without gradients and returns per-level `[N, F, H, W]`.
    pub fn features(&self, images: &[&Image]) -> Vec<Tensor> {
        let mut g = Graph::no_grad();
        let x = g.constant(batch(images));
        let pyr = self.pyramid(&mut g, x);
        pyr.iter().map(|&v| g.value(v).clone()).collect()
    }

    /// FPN features of a single image.
    pub fn extract_pyramid(&self, image: &Image, source: Source) -> Result<FeaturePyramid> {
        let levels = self.features(&[image]);
        FeaturePyramid::from_tensors(levels.iter().map(|t| t.select0(0)).collect(), source)
    }

    /// Scored, labelled detections after per-class NMS.
    pub fn predict(&self, images: &[&Image]) -> Vec<BoxSet> {
        let mut g = Graph::no_grad();
        let x = g.constant(batch(images));
        let out = self.forward(&mut g, x);
        let heads: Vec<(Tensor, Tensor)> = out
            .heads
            .iter()
            .map(|&(c, r)| (g.value(c).clone(), g.value(r).clone()))
            .collect();
        images
            .iter()
            .enumerate()
            .map(|(n, im)| decode(&self.spec, &heads, n, (im.height(), im.width())))
            .collect()
    }
}

fn dims(g: &Graph, v: Var) -> (usize, usize, usize, usize) {
    let s = g.shape(v);
    (s[0], s[1], s[2], s[3])
}

/// Sigmoid focal loss (γ = 2), summed over all entries.
pub fn focal_loss(g: &mut Graph, logits: Var, targets: &Tensor) -> Var {
    let t = g.constant(targets.clone());
    let one_minus_t = g.constant(targets.map(|v| 1.0 - v));
    let p = g.sigmoid(logits);
    let neg_logits = g.scale(logits, -1.0);
    let q = g.sigmoid(neg_logits);
    // -log p = softplus(-x), -log(1-p) = softplus(x)
    let nlp = g.softplus(neg_logits);
    let nlq = g.softplus(logits);
    let q2 = g.square(q);
    let pos = g.mul(q2, nlp);
    let pos = g.mul(pos, t);
    let p2 = g.square(p);
    let neg = g.mul(p2, nlq);
    let neg = g.mul(neg, one_minus_t);
    let pos = g.scale(pos, FOCAL_ALPHA);
    let neg = g.scale(neg, 1.0 - FOCAL_ALPHA);
    let both = g.add(pos, neg);
    g.sum(both)
}

/// Dense per-level training targets.
pub struct LevelTargets {
    /// `[N, K, H, W]` one-hot class targets.
    pub cls: Tensor,
    /// `[N, 4, H, W]` box regression targets (meaningful at positives only).
    pub boxes: Tensor,
    /// `[N, 1, H, W]` positive-cell indicator.
    pub pos: Tensor,
}

/// Pyramid level whose anchor size `2·stride` is closest (in log scale) to the
/// box's longer side.
pub fn assign_level(strides: &[usize], longer_side_px: f64) -> usize {
    strides
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            let da = (longer_side_px / (2.0 * **a as f64)).ln().abs();
            let db = (longer_side_px / (2.0 * **b as f64)).ln().abs();
            da.total_cmp(&db)
        })
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn encode(head: HeadStyle, stride: f64, cx: f64, cy: f64, b: [f64; 4]) -> [f64; 4] {
    match head {
        HeadStyle::AnchorFree => [
            (cx - b[0]) / stride,
            (cy - b[1]) / stride,
            (b[2] - cx) / stride,
            (b[3] - cy) / stride,
        ],
        HeadStyle::AnchorBased => {
            let a = 2.0 * stride;
            let (bw, bh) = (b[2] - b[0], b[3] - b[1]);
            [
                ((b[0] + b[2]) / 2.0 - cx) / a,
                ((b[1] + b[3]) / 2.0 - cy) / a,
                (bw / a).ln(),
                (bh / a).ln(),
            ]
        }
    }
}

fn decode_box(head: HeadStyle, stride: f64, cx: f64, cy: f64, t: [f64; 4]) -> [f64; 4] {
    match head {
        HeadStyle::AnchorFree => [
            cx - t[0] * stride,
            cy - t[1] * stride,
            cx + t[2] * stride,
            cy + t[3] * stride,
        ],
        HeadStyle::AnchorBased => {
            let a = 2.0 * stride;
            let (bx, by) = (cx + t[0] * a, cy + t[1] * a);
            let (bw, bh) = (a * t[2].clamp(-4.0, 4.0).exp(), a * t[3].clamp(-4.0, 4.0).exp());
            [bx - bw / 2.0, by - bh / 2.0, bx + bw / 2.0, by + bh / 2.0]
        }
    }
}

/// Assigns each ground-truth box to one level; the cell holding the box
/// centre and any 4-neighbour whose centre lies inside the box are positive.
pub fn build_targets(
    spec: &TinyDetectorSpec,
    gts: &[&BoxSet],
    image_size: (usize, usize),
    level_shapes: &[(usize, usize)],
) -> Vec<LevelTargets> {
    let n = gts.len();
    let k = spec.num_classes;
    let strides = spec.strides();
    let (img_h, img_w) = (image_size.0 as f64, image_size.1 as f64);
    let mut out: Vec<LevelTargets> = level_shapes
        .iter()
        .map(|&(h, w)| LevelTargets {
            cls: Tensor::zeros(&[n, k, h, w]),
            boxes: Tensor::zeros(&[n, 4, h, w]),
            pos: Tensor::zeros(&[n, 1, h, w]),
        })
        .collect();
    for (ni, gt) in gts.iter().enumerate() {
        // Larger boxes first so smaller ones win contested cells.
        let mut order: Vec<usize> = (0..gt.len()).collect();
        order.sort_by(|&a, &b| gt.boxes()[b].area().total_cmp(&gt.boxes()[a].area()));
        for i in order {
            let bb = gt.boxes()[i];
            let px = [bb.x_min * img_w, bb.y_min * img_h, bb.x_max * img_w, bb.y_max * img_h];
            let longer = (px[2] - px[0]).max(px[3] - px[1]);
            let l = assign_level(&strides, longer);
            let (h, w) = level_shapes[l];
            let s = strides[l] as f64;
            let (bcx, bcy) = ((px[0] + px[2]) / 2.0, (px[1] + px[3]) / 2.0);
            let ci = ((bcy / s) as usize).min(h - 1);
            let cj = ((bcx / s) as usize).min(w - 1);
            let mut cells = vec![(ci, cj)];
            for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (yi, xj) = (ci as i64 + di, cj as i64 + dj);
                if yi < 0 || xj < 0 || yi >= h as i64 || xj >= w as i64 {
                    continue;
                }
                let (cy, cx) = ((yi as f64 + 0.5) * s, (xj as f64 + 0.5) * s);
                if cx > px[0] && cx < px[2] && cy > px[1] && cy < px[3] {
                    cells.push((yi as usize, xj as usize));
                }
            }
            let t = &mut out[l];
            let label = gt.label(i).min(k - 1);
            for (yi, xj) in cells {
                let (cy, cx) = ((yi as f64 + 0.5) * s, (xj as f64 + 0.5) * s);
                let enc = encode(spec.head, s, cx, cy, px);
                let plane = h * w;
                let cell = yi * w + xj;
                for c in 0..k {
                    t.cls.data_mut()[(ni * k + c) * plane + cell] = if c == label { 1.0 } else { 0.0 };
                }
                for (d, v) in enc.iter().enumerate() {
                    t.boxes.data_mut()[(ni * 4 + d) * plane + cell] = *v;
                }
                t.pos.data_mut()[ni * plane + cell] = 1.0;
            }
        }
    }
    out
}

fn decode(spec: &TinyDetectorSpec, heads: &[(Tensor, Tensor)], n: usize, image_size: (usize, usize)) -> BoxSet {
    let strides = spec.strides();
    let k = spec.num_classes;
    let (img_h, img_w) = (image_size.0 as f64, image_size.1 as f64);
    let mut cands: Vec<(f64, usize, [f64; 4])> = Vec::new();
    for (l, (cls, reg)) in heads.iter().enumerate() {
        let (_, _, h, w) = cls.dims4();
        let s = strides[l] as f64;
        let plane = h * w;
        for yi in 0..h {
            for xj in 0..w {
                let cell = yi * w + xj;
                let (cy, cx) = ((yi as f64 + 0.5) * s, (xj as f64 + 0.5) * s);
                let mut t = [0.0; 4];
                for (d, slot) in t.iter_mut().enumerate() {
                    *slot = reg.data()[(n * 4 + d) * plane + cell];
                }
                let b = decode_box(spec.head, s, cx, cy, t);
                let b = [
                    (b[0] / img_w).clamp(0.0, 1.0),
                    (b[1] / img_h).clamp(0.0, 1.0),
                    (b[2] / img_w).clamp(0.0, 1.0),
                    (b[3] / img_h).clamp(0.0, 1.0),
                ];
                if !(b[0] < b[2] && b[1] < b[3]) {
                    continue;
                }
                for c in 0..k {
                    let score = crate::graph::sigmoid(cls.data()[(n * k + c) * plane + cell]);
                    if score >= SCORE_THRESHOLD {
                        cands.push((score, c, b));
                    }
                }
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut kept: Vec<(f64, usize, BBox)> = Vec::new();
    for (score, c, b) in cands {
        let bb = BBox {
            x_min: b[0],
            y_min: b[1],
            x_max: b[2],
            y_max: b[3],
        };
        if kept
            .iter()
            .any(|(_, kc, kb)| *kc == c && kb.iou(&bb) > NMS_IOU)
        {
            continue;
        }
        kept.push((score, c, bb));
        if kept.len() == MAX_DETECTIONS {
            break;
        }
    }
    let mut out = BoxSet::empty(image_size);
    for (score, c, b) in kept {
        out.push(b, score, Some(c));
    }
    out
}
