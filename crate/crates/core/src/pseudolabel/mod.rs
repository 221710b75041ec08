//! Segment-wise pseudo-labeling.
//!
//! Valid segments are described as tight crops of the resized image (the
//! external extractor renders them, blacking out pixels of other segments,
//! and returns one feature row per crop). Crop features are clustered with
//! k-means and each valid segment inherits its crop's cluster id.

mod crops;
mod kmeans;
mod retrieval;

pub use crops::{
    make_crop_specs, patch_mean_crop_features, BBox, CropRecord, CropsManifest, CROP_FILL_VALUE,
};
pub use kmeans::{kmeans, kmeans_with, l2_normalize_rows, ClusterModel, KMeansOptions};
pub use retrieval::{retrieve_neighbors, Neighbor};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graphseg::SegmentSet;
use crate::maskgen::UNLABELED;

/// Largest usable cluster count; label 255 is the UNLABELED sentinel.
pub const MAX_CLUSTERS: usize = UNLABELED as usize;

pub fn check_cluster_count(k: usize) -> Result<()> {
    if k == 0 || k > MAX_CLUSTERS {
        return Err(Error::InvalidArgument(format!(
            "cluster count {k} must be in 1..={MAX_CLUSTERS}"
        )));
    }
    Ok(())
}

/// Copies cluster ids onto valid segments; noisy segments get no label.
///
/// `crops` may cover several images; only records for this image are used.
pub fn assign_segment_labels(
    segments: &SegmentSet,
    crops: &[CropRecord],
    model: &ClusterModel,
) -> Result<SegmentSet> {
    check_cluster_count(model.k)?;
    let rows: HashMap<usize, Option<usize>> = crops
        .iter()
        .filter(|c| c.image_id == segments.image_id)
        .map(|c| (c.segment_id, c.crop_feature_row))
        .collect();
    let mut out = segments.clone();
    for seg in out.segments.iter_mut() {
        seg.label = if seg.valid {
            let row = rows
                .get(&seg.segment_id)
                .copied()
                .flatten()
                .filter(|&r| r < model.assignment.len())
                .ok_or_else(|| Error::MissingCropFeature {
                    image_id: segments.image_id.clone(),
                    segment_id: seg.segment_id,
                })?;
            Some(model.assignment[row] as u8)
        } else {
            None
        };
    }
    Ok(out)
}
