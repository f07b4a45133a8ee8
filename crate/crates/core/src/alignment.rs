//! Semantic feature alignment: teacher and student features are standardized
//! per level and compared by mean-squared error, which for standardized
//! vectors is `2·(1 − P)` with `P` their Pearson correlation.

use crate::config::StandardizeScope;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::types::{FeatureMap, FeaturePyramid};

/// Smallest standard deviation used as a divisor.
pub const SD_FLOOR: f64 = 1e-12;

/// A feature with its global mean and standard deviation removed.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizedFeature {
    pub data: Tensor,
    pub mu: f64,
    /// Zero for constant input.
    pub sd: f64,
}

fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    (mu, var.sqrt())
}

fn standardize_slice(x: &[f64]) -> (Vec<f64>, f64, f64) {
    let (mu, sd) = moments(x);
    if x.iter().all(|&v| v == x[0]) {
        return (vec![0.0; x.len()], mu, 0.0);
    }
    let d = sd.max(SD_FLOOR);
    (x.iter().map(|v| (v - mu) / d).collect(), mu, sd)
}

/// Zero-mean, unit-variance copy over all `C·H·W` entries.
pub fn standardize(feat: &FeatureMap) -> StandardizedFeature {
    let (data, mu, sd) = standardize_slice(feat.data().data());
    StandardizedFeature {
        data: Tensor::new(feat.data().shape().to_vec(), data),
        mu,
        sd,
    }
}

/// Standardizes each channel separately.
pub fn standardize_per_channel(feat: &FeatureMap) -> Tensor {
    let hw = feat.height() * feat.width();
    let data: Vec<f64> = feat
        .data()
        .data()
        .chunks_exact(hw)
        .flat_map(|ch| standardize_slice(ch).0)
        .collect();
    Tensor::new(feat.data().shape().to_vec(), data)
}

fn standardized(feat: &FeatureMap, scope: StandardizeScope) -> Tensor {
    match scope {
        StandardizeScope::Global => standardize(feat).data,
        StandardizeScope::PerChannel => standardize_per_channel(feat),
    }
}

/// Pearson correlation. Returns 0 when either side is constant.
pub fn pearson(s: &[f64], t: &[f64]) -> Result<f64> {
    if s.len() != t.len() {
        return Err(Error::Shape(format!("pearson of lengths {} and {}", s.len(), t.len())));
    }
    if s.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least two entries".into()));
    }
    let (ms, _) = moments(s);
    let (mt, _) = moments(t);
    let (mut num, mut ss, mut tt) = (0.0, 0.0, 0.0);
    for (a, b) in s.iter().zip(t) {
        let (da, db) = (a - ms, b - mt);
        num += da * db;
        ss += da * da;
        tt += db * db;
    }
    if ss == 0.0 || tt == 0.0 {
        return Ok(0.0);
    }
    // sqrt(x·x) == x exactly, so ±s against s gives exactly ±1
    let denom = match (ss * tt).sqrt() {
        d if d.is_finite() && d > 0.0 => d,
        _ => ss.sqrt() * tt.sqrt(),
    };
    Ok((num / denom).clamp(-1.0, 1.0))
}

fn check_levels(levels: &[usize], depth: usize) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("alignment level set is empty".into()));
    }
    if let Some(&bad) = levels.iter().find(|&&l| l >= depth) {
        return Err(Error::InvalidArgument(format!(
            "alignment level {bad} out of range for {depth} levels"
        )));
    }
    Ok(())
}

/// Mean over `levels` of the MSE between standardized teacher and student
/// features. Student features must already have the teacher's channel count.
pub fn sfa_loss(teacher: &FeaturePyramid, student: &FeaturePyramid, levels: &[usize]) -> Result<f64> {
    sfa_loss_scoped(teacher, student, levels, StandardizeScope::Global)
}

pub fn sfa_loss_scoped(
    teacher: &FeaturePyramid,
    student: &FeaturePyramid,
    levels: &[usize],
    scope: StandardizeScope,
) -> Result<f64> {
    if teacher.len() != student.len() {
        return Err(Error::Shape(format!(
            "teacher has {} levels, student {}",
            teacher.len(),
            student.len()
        )));
    }
    check_levels(levels, teacher.len())?;
    let mut total = 0.0;
    for &l in levels {
        let (t, s) = (&teacher.levels()[l], &student.levels()[l]);
        if t.data().shape() != s.data().shape() {
            return Err(Error::Shape(format!(
                "level {l}: teacher {:?} vs student {:?}",
                t.data().shape(),
                s.data().shape()
            )));
        }
        let (zt, zs) = (standardized(t, scope), standardized(s, scope));
        let n = zt.len() as f64;
        total += zt.data().iter().zip(zs.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    }
    Ok(total / levels.len() as f64)
}

/// Per-sample standardization of a `[N, C, H, W]` variable.
pub fn standardize_var(g: &mut Graph, x: Var, scope: StandardizeScope) -> Var {
    let axes: &[usize] = match scope {
        StandardizeScope::Global => &[1, 2, 3],
        StandardizeScope::PerChannel => &[2, 3],
    };
    let mu = g.mean_axes(x, axes);
    let centered = g.sub(x, mu);
    let sq = g.square(centered);
    let var = g.mean_axes(sq, axes);
    let var = g.clamp_min(var, SD_FLOOR * SD_FLOOR);
    let sd = g.sqrt(var);
    g.div(centered, sd)
}

/// Alignment term for one level of a batch: MSE between the standardized
/// teacher tensor and the standardized student variable.
pub fn sfa_level_var(g: &mut Graph, teacher: &Tensor, student: Var, scope: StandardizeScope) -> Result<Var> {
    if g.shape(student) != teacher.shape() {
        return Err(Error::Shape(format!(
            "teacher {:?} vs student {:?}",
            teacher.shape(),
            g.shape(student)
        )));
    }
    let t = g.constant(teacher.clone());
    let zt = standardize_var(g, t, scope);
    let zs = standardize_var(g, student, scope);
    let d = g.sub(zt, zs);
    let d2 = g.square(d);
    Ok(g.mean(d2))
}
