//! Congenerous cosine (COCO) metric learning at desk scale.
//!
//! The crate provides the COCO loss with analytic gradients, softmax, center
//! and triplet baselines, a finite-difference gradient checker, a small MLP
//! training harness, feature-quality metrics, and the region score fusion and
//! affine keypoint alignment used for person recognition.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod align;
pub mod baselines;
pub mod coco;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod gradcheck;
pub mod math;
pub mod train;

pub use coco::{
    batch_centroids, coco_backward, coco_forward, naive_pair_loss, optimal_alpha, AlphaForm, Batch,
    CentroidBank, CentroidMode, GradientBundle, LossOutput, ScaleConfig,
};
pub use error::{Error, Result};
pub use math::{
    cosine_similarity, l2_norm, normalize_scale, stable_softmax, FeatureVector, Matrix,
    ProbabilityVector,
};
