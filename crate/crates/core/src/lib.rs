//! Dual feature-masking, stage-wise knowledge distillation for object
//! detectors, at desk scale.
//!
//! A student detector learns from a chain of progressively stronger teachers.
//! In every stage the teacher's feature pyramid yields channel and spatial
//! attention maps; the most salient student positions and channels are masked
//! out and a small generation block has to reconstruct the teacher's features
//! from what is left. Two optional terms sharpen this:
//!
//! * masking enhancement re-runs the masked reconstruction on an augmented
//!   copy of each image, choosing Gaussian noise for small-object scenes and
//!   crop-and-zoom for large-object scenes from the previous teacher's boxes;
//! * semantic feature alignment pulls standardized student features toward
//!   the teacher's, per pyramid level (a Pearson-correlation objective).
//!
//! Everything runs on a small reverse-mode autodiff engine ([`graph`]) in
//! `f64`, so every loss can be checked against finite differences
//! ([`gradcheck`]). The `book/` directory holds a guide whose code samples are
//! compiled and run as doctests of this crate.

pub mod alignment;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod freq;
pub mod gradcheck;
pub mod graph;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sal;
pub mod tensor;
pub mod types;
pub mod zoo;

pub use config::{load_config, DistillConfig, StageSpec};
pub use error::{Error, Result};
pub use tensor::Tensor;
pub use types::{BBox, BoxSet, FeatureMap, FeaturePyramid, Source};

// The guide's code samples, run by `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/alignment.md")]
    mod alignment {}
    #[doc = include_str!("../../../book/src/augmentation.md")]
    mod augmentation {}
    #[doc = include_str!("../../../book/src/schedule.md")]
    mod schedule {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
