//! Scalar training objectives.
//!
//! Every feature term is a per-level mean squared error (sum of squares over
//! `C·H·W`, divided by that count) summed over levels. The masked
//! reconstruction term uses the same normalization as the plain imitation
//! term so level sizes do not reweight gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::types::FeaturePyramid;

/// Per-step loss components.
///
/// `distill = recon + β·me + w_sfa·sfa` and `total = gt + α·distill`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub gt: f64,
    pub recon: f64,
    pub me: f64,
    pub sfa: f64,
    pub distill: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.gt, self.recon, self.me, self.sfa, self.distill, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn level_mse(t: &Tensor, s: &Tensor) -> f64 {
    t.data().iter().zip(s.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.len() as f64
}

fn pyramid_mse(teacher: &FeaturePyramid, student: &FeaturePyramid) -> Result<f64> {
    if teacher.len() != student.len() {
        return Err(Error::Shape(format!(
            "teacher has {} levels, student {}",
            teacher.len(),
            student.len()
        )));
    }
    let mut total = 0.0;
    for (t, s) in teacher.levels().iter().zip(student.levels()) {
        if t.data().shape() != s.data().shape() {
            return Err(Error::Shape(format!(
                "level {}: teacher {:?} vs student {:?}",
                t.level_id,
                t.data().shape(),
                s.data().shape()
            )));
        }
        total += level_mse(t.data(), s.data());
    }
    Ok(total)
}

/// Plain feature imitation; `student` is already projected to teacher channels.
pub fn feature_distill_loss(teacher: &FeaturePyramid, student: &FeaturePyramid) -> Result<f64> {
    pyramid_mse(teacher, student)
}

/// Reconstruction error of the masked student plus `β·me_term`.
pub fn masked_distill_loss(
    teacher: &FeaturePyramid,
    reconstructed_student: &FeaturePyramid,
    me_term: f64,
    beta: f64,
) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be non-negative, got {beta}")));
    }
    Ok(pyramid_mse(teacher, reconstructed_student)? + beta * me_term)
}

/// The masked imitation term evaluated on the enhanced input.
pub fn me_loss(teacher_enh: &FeaturePyramid, student_enh_masked: &FeaturePyramid) -> Result<f64> {
    pyramid_mse(teacher_enh, student_enh_masked)
}

/// `gt + α·distill`, with the given component values.
pub fn total_loss(gt: f64, distill: f64, alpha: f64) -> LossBreakdown {
    LossBreakdown {
        gt,
        distill,
        total: gt + alpha * distill,
        ..Default::default()
    }
}

/// Graph kernel: mean squared error of one level against a fixed teacher.
pub fn level_mse_var(g: &mut Graph, teacher: &Tensor, student: Var) -> Result<Var> {
    if g.shape(student) != teacher.shape() {
        return Err(Error::Shape(format!(
            "teacher {:?} vs student {:?}",
            teacher.shape(),
            g.shape(student)
        )));
    }
    let t = g.constant(teacher.clone());
    let d = g.sub(student, t);
    let d2 = g.square(d);
    Ok(g.mean(d2))
}

/// Sum over levels of [`level_mse_var`].
pub fn pyramid_mse_var(g: &mut Graph, teacher: &[Tensor], student: &[Var]) -> Result<Var> {
    if teacher.len() != student.len() || teacher.is_empty() {
        return Err(Error::Shape(format!(
            "teacher has {} levels, student {}",
            teacher.len(),
            student.len()
        )));
    }
    let mut acc = level_mse_var(g, &teacher[0], student[0])?;
    for (t, &s) in teacher.iter().zip(student).skip(1) {
        let l = level_mse_var(g, t, s)?;
        acc = g.add(acc, l);
    }
    Ok(acc)
}

/// `a + k·b`, or just `a` when `k` is zero.
pub fn weighted_sum_var(g: &mut Graph, a: Var, b: Var, k: f64) -> Var {
    if k == 0.0 {
        return a;
    }
    let kb = g.scale(b, k);
    g.add(a, kb)
}
