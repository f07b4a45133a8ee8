//! Teacher-guided dual attention, attention-ranked masking of student
//! features, and the trainable blocks that project and reconstruct them.
//!
//! Channel attention is `sigmoid(mean_{h,w} F_c / τ)`; spatial attention is
//! `sigmoid(Σ_c F_c(h,w)² / (C·τ))`, resampled to the student's resolution
//! when the two differ. Masks zero out the `round(ρ·H·W)` most attended
//! positions and the `round(ρ·C)` most attended channels, so the student has
//! to regenerate exactly the regions the teacher finds salient. Position and
//! channel masks combine multiplicatively: an entry survives only if both its
//! position and its channel are kept.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{resize_bilinear_forward, Graph, Var};
use crate::nn::{Conv2d, ParamStore};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;
use crate::types::FeatureMap;

/// Sigmoid kept strictly inside `(0, 1)` even where `f64` would round to 0 or 1.
fn open_sigmoid(x: f64) -> f64 {
    crate::graph::sigmoid(x).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")))
    }
}

/// `C×1×1` channel attention of a teacher feature map.
pub fn channel_attention(teacher: &FeatureMap, tau: f64) -> Result<Tensor> {
    check_tau(tau)?;
    let (c, hw) = (teacher.channels(), teacher.height() * teacher.width());
    let d = teacher.data().data();
    Ok(Tensor::from_fn(&[c, 1, 1], |ch| {
        let mean = d[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64;
        open_sigmoid(mean / tau)
    }))
}

/// `1×H×W` spatial attention of a teacher feature map at its own resolution.
pub fn spatial_attention(teacher: &FeatureMap, tau: f64) -> Result<Tensor> {
    check_tau(tau)?;
    let (c, h, w) = (teacher.channels(), teacher.height(), teacher.width());
    let d = teacher.data().data();
    Ok(Tensor::from_fn(&[1, h, w], |p| {
        let energy: f64 = (0..c).map(|ch| d[ch * h * w + p].powi(2)).sum();
        open_sigmoid(energy / (c as f64 * tau))
    }))
}

/// Channel and spatial attention for one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPair {
    /// `C×1×1`.
    pub channel: Tensor,
    /// `1×H×W`.
    pub spatial: Tensor,
}

impl AttentionPair {
    /// Attention of `teacher`, with the spatial map aligned to `target_hw`
    /// (identity when sizes already agree, bilinear otherwise).
    pub fn compute(teacher: &FeatureMap, tau: f64, target_hw: Option<(usize, usize)>) -> Result<Self> {
        let channel = channel_attention(teacher, tau)?;
        let mut spatial = spatial_attention(teacher, tau)?;
        if let Some((h, w)) = target_hw {
            if (h, w) != (teacher.height(), teacher.width()) {
                let s = spatial.reshape(&[1, 1, teacher.height(), teacher.width()]);
                spatial = resize_bilinear_forward(&s, h, w).reshape(&[1, h, w]);
            }
        }
        Ok(AttentionPair { channel, spatial })
    }

    pub fn channels(&self) -> usize {
        self.channel.len()
    }

    pub fn spatial_hw(&self) -> (usize, usize) {
        (self.spatial.shape()[1], self.spatial.shape()[2])
    }
}

/// Binary keep-masks (1 = kept, 0 = masked).
#[derive(Clone, Debug, PartialEq)]
pub struct DualMask {
    /// `1×H×W`.
    pub spatial_mask: Tensor,
    /// `C×1×1`.
    pub channel_mask: Tensor,
    pub rho: f64,
}

impl DualMask {
    pub fn masked_positions(&self) -> usize {
        self.spatial_mask.data().iter().filter(|&&v| v == 0.0).count()
    }

    pub fn masked_channels(&self) -> usize {
        self.channel_mask.data().iter().filter(|&&v| v == 0.0).count()
    }
}

/// Zeros for the `count` highest scores; ties are ordered by a random
/// permutation drawn from `rng`.
fn top_mask<R: Rng>(scores: &[f64], count: usize, rng: &mut R) -> Vec<f64> {
    let mut tiebreak: Vec<usize> = (0..scores.len()).collect();
    tiebreak.shuffle(rng);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(tiebreak[a].cmp(&tiebreak[b])));
    let mut mask = vec![1.0; scores.len()];
    for &i in order.iter().take(count) {
        mask[i] = 0.0;
    }
    mask
}

/// Masks the `round(ρ·H·W)` most attended positions and `round(ρ·C)` most
/// attended channels.
pub fn build_masks(att: &AttentionPair, rho: f64, seed: u64) -> Result<DualMask> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("rho out of (0,1): {rho}")));
    }
    let (h, w) = att.spatial_hw();
    let c = att.channels();
    let n_pos = (rho * (h * w) as f64).round() as usize;
    let n_ch = (rho * c as f64).round() as usize;
    let mut rng = stream(seed, &[tag::MASK]);
    let spatial = top_mask(att.spatial.data(), n_pos, &mut rng);
    let channel = top_mask(att.channel.data(), n_ch, &mut rng);
    Ok(DualMask {
        spatial_mask: Tensor::new(vec![1, h, w], spatial),
        channel_mask: Tensor::new(vec![c, 1, 1], channel),
        rho,
    })
}

/// `student ⊙ spatial_mask ⊙ channel_mask`.
pub fn apply_mask(student: &FeatureMap, mask: &DualMask) -> Result<FeatureMap> {
    let (c, h, w) = (student.channels(), student.height(), student.width());
    if mask.channel_mask.len() != c || mask.spatial_mask.shape() != [1, h, w] {
        return Err(Error::Shape(format!(
            "mask ({} channels, {:?}) vs feature {c}×{h}×{w}",
            mask.channel_mask.len(),
            mask.spatial_mask.shape()
        )));
    }
    let sm = mask.spatial_mask.data();
    let cm = mask.channel_mask.data();
    let d = student.data().data();
    FeatureMap::from_fn(student.level_id, c, h, w, |i| {
        d[i] * cm[i / (h * w)] * sm[i % (h * w)]
    })
}

/// Batched masking inside a graph: `x` is `[N, C, H, W]`, one mask per sample.
pub fn apply_masks_var(g: &mut Graph, x: Var, masks: &[DualMask]) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if masks.len() != n {
        return Err(Error::Shape(format!("{} masks for batch of {n}", masks.len())));
    }
    for m in masks {
        if m.channel_mask.len() != c || m.spatial_mask.shape() != [1, h, w] {
            return Err(Error::Shape("mask does not match feature shape".into()));
        }
    }
    let spatial: Vec<Tensor> = masks.iter().map(|m| m.spatial_mask.clone()).collect();
    let channel: Vec<Tensor> = masks.iter().map(|m| m.channel_mask.clone()).collect();
    let sp = g.constant(Tensor::stack(&spatial));
    let ch = g.constant(Tensor::stack(&channel));
    let y = g.mul(x, sp);
    Ok(g.mul(y, ch))
}

/// Channel-recalibration (squeeze-excitation) followed by two 3×3 convs.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationBlock {
    squeeze: Conv2d,
    excite: Conv2d,
    conv1: Conv2d,
    conv2: Conv2d,
}

/// SE bottleneck reduction factor.
pub const SE_REDUCTION: usize = 4;

impl GenerationBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, channels: usize, rng: &mut R) -> Self {
        let hidden = (channels / SE_REDUCTION).max(1);
        GenerationBlock {
            squeeze: Conv2d::new(store, &format!("{name}.se_squeeze"), channels, hidden, 1, 1, rng),
            excite: Conv2d::new(store, &format!("{name}.se_excite"), hidden, channels, 1, 1, rng),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), channels, channels, 3, 1, rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), channels, channels, 3, 1, rng),
        }
    }

    /// Same-shape reconstruction of a masked `[N, C, H, W]` feature.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let pooled = g.mean_axes(x, &[2, 3]);
        let z = self.squeeze.forward(g, store, pooled);
        let z = g.silu(z);
        let z = self.excite.forward(g, store, z);
        let gate = g.sigmoid(z);
        let y = g.mul(x, gate);
        let y = self.conv1.forward(g, store, y);
        let y = g.silu(y);
        self.conv2.forward(g, store, y)
    }

    /// Reconstructs a single masked feature map.
    pub fn reconstruct(&self, store: &ParamStore, masked: &FeatureMap) -> Result<FeatureMap> {
        let mut g = Graph::no_grad();
        let x = g.constant(masked.as_batch());
        let y = self.forward(&mut g, store, x);
        FeatureMap::new(masked.level_id, g.value(y).select0(0))
    }
}

/// The 1×1 projection `Φ` from student to teacher channel count.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    conv: Conv2d,
}

impl Projection {
    /// Identity-initialised when channel counts agree, random otherwise.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, rng: &mut R) -> Self {
        let conv = if in_c == out_c {
            Conv2d::identity(store, name, in_c)
        } else {
            Conv2d::new(store, name, in_c, out_c, 1, 1, rng)
        };
        Projection { conv }
    }

    pub fn target_channels(&self, store: &ParamStore) -> usize {
        self.conv.out_channels(store)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        self.conv.forward(g, store, x)
    }

    pub fn project(&self, store: &ParamStore, student: &FeatureMap) -> Result<FeatureMap> {
        let mut g = Graph::no_grad();
        let x = g.constant(student.as_batch());
        let y = self.forward(&mut g, store, x);
        FeatureMap::new(student.level_id, g.value(y).select0(0))
    }
}

/// Per-level projection and generation blocks for one teacher/student pair.
#[derive(Clone, Debug)]
pub struct Adapters {
    pub store: ParamStore,
    pub projections: Vec<Projection>,
    pub generators: Vec<GenerationBlock>,
}

impl Adapters {
    pub fn new(levels: usize, student_channels: usize, teacher_channels: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[tag::ADAPTER]);
        let mut store = ParamStore::new();
        let mut projections = Vec::new();
        let mut generators = Vec::new();
        for l in 0..levels {
            projections.push(Projection::new(
                &mut store,
                &format!("phi{l}"),
                student_channels,
                teacher_channels,
                &mut rng,
            ));
            generators.push(GenerationBlock::new(
                &mut store,
                &format!("gen{l}"),
                teacher_channels,
                &mut rng,
            ));
        }
        Adapters {
            store,
            projections,
            generators,
        }
    }
}
