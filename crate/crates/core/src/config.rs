//! Run configuration: hyperparameters, the stage plan, teachers and data.
//!
//! Configs are TOML documents. Every field has a default, so an empty
//! document is a valid two-stage run. [`DistillConfig::validate`] reports every
//! violated invariant at once rather than stopping at the first.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result};
use crate::zoo::{HeadStyle, TinyDetectorSpec};

/// One stage of the weak→strong teacher chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub teacher_id: String,
    #[serde(default)]
    pub enable_masking_enhancement: bool,
    #[serde(default)]
    pub enable_semantic_alignment: bool,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            momentum: 0.9,
            weight_decay: 1e-4,
            learning_rate: 0.03,
        }
    }
}

/// Masking-enhancement augmentation knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Probability that the noise branch actually perturbs an image.
    pub noise_prob: f64,
    pub crop_min_keep: f64,
    pub crop_max_keep: f64,
    /// Teacher detections below this score do not count toward `Area(x)`.
    pub score_floor: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            noise_prob: 0.5,
            crop_min_keep: 0.5,
            crop_max_keep: 0.9,
            score_floor: 0.3,
        }
    }
}

/// How features are standardized before alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeScope {
    /// One mean/std over all `C·H·W` entries of a level.
    #[default]
    Global,
    /// One mean/std per channel.
    PerChannel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub id: String,
    pub strength_rank: u32,
    pub detector: TinyDetectorSpec,
    /// Pretrained weights; when absent the teacher is trained from scratch on
    /// the run's data for `pretrain_steps` before distillation starts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_pretrain_steps")]
    pub pretrain_steps: usize,
}

fn default_pretrain_steps() -> usize {
    1200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// COCO-style annotation document; synthetic data is generated when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    pub synthetic_images: usize,
    pub image_size: usize,
    /// Fraction of small-object-dominated synthetic images.
    pub size_mix: f64,
    /// Size of the held-out synthetic split used for evaluation.
    pub eval_images: usize,
    /// Seed of the synthetic data, independent of the training seed so that
    /// runs with different seeds see the same images.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            annotations: None,
            synthetic_images: 200,
            image_size: 64,
            size_mix: 0.5,
            eval_images: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Attention temperature.
    pub tau: f64,
    /// Fraction of positions (and of channels) that are masked.
    pub rho: f64,
    /// Area threshold separating the noise and crop branches.
    pub lambda_thresh: f64,
    /// Gaussian noise standard deviation, in `[0, 1]` pixel units.
    pub sigma: f64,
    /// Weight of the distillation term in the total loss.
    pub alpha: f64,
    /// Weight of the masking-enhancement term inside the distillation loss.
    pub beta: f64,
    /// Weight of the semantic alignment term inside the distillation loss.
    pub sfa_weight: f64,
    /// Pyramid levels aligned by SFA; all levels when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sfa_levels: Option<Vec<usize>>,
    pub sfa_scope: StandardizeScope,
    pub seed: u64,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub augment: AugmentConfig,
    pub student: TinyDetectorSpec,
    pub data: DataConfig,
    pub teachers: Vec<TeacherConfig>,
    pub stages: Vec<StageSpec>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            tau: 0.5,
            rho: 0.5,
            lambda_thresh: 0.5,
            sigma: 0.1,
            alpha: 5.0e-7,
            beta: 2.5e-7,
            sfa_weight: 1.0,
            sfa_levels: None,
            sfa_scope: StandardizeScope::Global,
            seed: 0,
            batch_size: 8,
            optimizer: OptimizerConfig::default(),
            augment: AugmentConfig::default(),
            student: TinyDetectorSpec::student(),
            data: DataConfig::default(),
            teachers: vec![
                TeacherConfig {
                    id: "weak".into(),
                    strength_rank: 1,
                    detector: TinyDetectorSpec {
                        width_multiplier: 1.5,
                        head: HeadStyle::AnchorBased,
                        ..TinyDetectorSpec::student()
                    },
                    checkpoint: None,
                    pretrain_steps: default_pretrain_steps(),
                },
                TeacherConfig {
                    id: "strong".into(),
                    strength_rank: 2,
                    detector: TinyDetectorSpec {
                        width_multiplier: 2.0,
                        head: HeadStyle::AnchorFree,
                        ..TinyDetectorSpec::student()
                    },
                    checkpoint: None,
                    pretrain_steps: default_pretrain_steps(),
                },
            ],
            stages: vec![
                StageSpec {
                    teacher_id: "weak".into(),
                    enable_masking_enhancement: false,
                    enable_semantic_alignment: true,
                    steps: 200,
                },
                StageSpec {
                    teacher_id: "strong".into(),
                    enable_masking_enhancement: true,
                    enable_semantic_alignment: true,
                    steps: 200,
                },
            ],
        }
    }
}

/// Reads, parses and validates a config file.
pub fn load_config(path: &Path) -> Result<DistillConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DistillConfig::from_toml_str(&text)
}

impl DistillConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: DistillConfig = toml::from_str(text).map_err(|e| Error::Parse {
            what: "config".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Number of stages `S`.
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn teacher(&self, id: &str) -> Option<&TeacherConfig> {
        self.teachers.iter().find(|t| t.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut bad = |field: &str, message: String| {
            errs.push(FieldError {
                field: field.to_string(),
                message,
            })
        };
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;

        if !finite_pos(self.tau) {
            bad("tau", format!("tau must be positive, got {}", self.tau));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            bad("rho", format!("rho out of (0,1): {}", self.rho));
        }
        if !(self.lambda_thresh > 0.0 && self.lambda_thresh <= 1.0) {
            bad(
                "lambda_thresh",
                format!("lambda_thresh out of (0,1]: {}", self.lambda_thresh),
            );
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("sfa_weight", self.sfa_weight),
        ] {
            if !finite_nonneg(v) {
                bad(name, format!("{name} must be ≥ 0, got {v}"));
            }
        }
        if self.batch_size == 0 {
            bad("batch_size", "batch_size must be ≥ 1".into());
        }

        let opt = &self.optimizer;
        if !(opt.momentum >= 0.0 && opt.momentum < 1.0) {
            bad(
                "optimizer.momentum",
                format!("momentum out of [0,1): {}", opt.momentum),
            );
        }
        if !finite_nonneg(opt.weight_decay) {
            bad(
                "optimizer.weight_decay",
                format!("weight_decay must be ≥ 0, got {}", opt.weight_decay),
            );
        }
        if !finite_pos(opt.learning_rate) {
            bad(
                "optimizer.learning_rate",
                format!("learning_rate must be positive, got {}", opt.learning_rate),
            );
        }

        let aug = &self.augment;
        if !(0.0..=1.0).contains(&aug.noise_prob) {
            bad(
                "augment.noise_prob",
                format!("noise_prob out of [0,1]: {}", aug.noise_prob),
            );
        }
        if !(aug.crop_min_keep > 0.0 && aug.crop_min_keep <= aug.crop_max_keep && aug.crop_max_keep <= 1.0) {
            bad(
                "augment.crop_min_keep",
                format!(
                    "need 0 < crop_min_keep ≤ crop_max_keep ≤ 1, got [{}, {}]",
                    aug.crop_min_keep, aug.crop_max_keep
                ),
            );
        }
        if !(0.0..=1.0).contains(&aug.score_floor) {
            bad(
                "augment.score_floor",
                format!("score_floor out of [0,1]: {}", aug.score_floor),
            );
        }

        for e in self.student.problems() {
            bad("student", e);
        }
        if !(0.0..=1.0).contains(&self.data.size_mix) {
            bad(
                "data.size_mix",
                format!("size_mix out of [0,1]: {}", self.data.size_mix),
            );
        }
        if self.data.annotations.is_none() && self.data.synthetic_images == 0 {
            bad("data.synthetic_images", "need at least one image".into());
        }
        if self.data.image_size < 8 {
            bad(
                "data.image_size",
                format!("image_size must be ≥ 8, got {}", self.data.image_size),
            );
        }
        if let Some(levels) = &self.sfa_levels {
            if levels.is_empty() {
                bad("sfa_levels", "sfa_levels must not be empty".into());
            }
            if let Some(l) = levels.iter().find(|&&l| l >= self.student.fpn_levels) {
                bad(
                    "sfa_levels",
                    format!("level {l} out of range for {} levels", self.student.fpn_levels),
                );
            }
        }

        let mut seen = HashSet::new();
        for (i, t) in self.teachers.iter().enumerate() {
            if !seen.insert(t.id.as_str()) {
                bad(&format!("teachers[{i}].id"), format!("duplicate teacher id {:?}", t.id));
            }
            for e in t.detector.problems() {
                bad(&format!("teachers[{i}].detector"), e);
            }
            if t.detector.fpn_levels != self.student.fpn_levels {
                bad(
                    &format!("teachers[{i}].detector.fpn_levels"),
                    "teacher and student pyramids must have the same number of levels".into(),
                );
            }
            if t.detector.num_classes != self.student.num_classes {
                bad(
                    &format!("teachers[{i}].detector.num_classes"),
                    "teacher and student must share the label space".into(),
                );
            }
        }

        if self.stages.is_empty() {
            bad("stages", "at least one stage is required".into());
        }
        let mut last_rank = None;
        for (i, s) in self.stages.iter().enumerate() {
            match self.teacher(&s.teacher_id) {
                None => bad(
                    &format!("stages[{i}].teacher_id"),
                    format!("unknown teacher {:?}", s.teacher_id),
                ),
                Some(t) => {
                    if let Some(prev) = last_rank {
                        if t.strength_rank <= prev {
                            bad(
                                &format!("stages[{i}].teacher_id"),
                                format!(
                                    "teacher {:?} (rank {}) is not stronger than the previous stage's (rank {prev})",
                                    t.id, t.strength_rank
                                ),
                            );
                        }
                    }
                    last_rank = Some(t.strength_rank);
                }
            }
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }
}
