//! Dense pseudo-annotated segmentation masks from self-supervised vision
//! transformer patch features.
//!
//! The pipeline runs per image: patch key features are turned into a
//! thresholded affinity graph ([`affinity`]), partitioned by Louvain
//! modularity maximization and split into spatially connected segments
//! ([`graphseg`]). Valid segments become crops whose features are clustered
//! with k-means into pseudo-classes ([`pseudolabel`]), and the cluster ids are
//! painted back into per-image masks ([`maskgen`]). [`evalkit`] scores masks
//! against ground truth with Hungarian-matched metrics and [`denoise`] holds
//! the masked cross-entropy objective plus the training-set export used by an
//! external segmentation trainer.

pub mod affinity;
pub mod denoise;
pub mod error;
pub mod evalkit;
pub mod graphseg;
pub mod grid;
pub mod maskgen;
pub mod pipeline;
pub mod pseudolabel;
pub mod synth;
pub mod tensorio;

pub use error::{Error, Result};
pub use grid::GridShape;
pub use maskgen::{PseudoMask, UNLABELED};
pub use tensorio::FeatureTensor;
