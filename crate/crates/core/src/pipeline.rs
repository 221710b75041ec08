//! Stage-level glue: per-image segmentation, the dataset-wide crop table,
//! clustering in a canonical crop order, and mask rendering at the original
//! image size.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::affinity::{build_affinity, threshold_adjacency_with, EdgeWeighting};
use crate::error::{Error, Result};
use crate::graphseg::{louvain, split_components, SegmentSet, DEFAULT_TAU};
use crate::grid::GridShape;
use crate::maskgen::{resize_mask, synthesize_mask, PseudoMask};
use crate::pseudolabel::{
    assign_segment_labels, check_cluster_count, kmeans_with, l2_normalize_rows, make_crop_specs,
    ClusterModel, CropRecord, CropsManifest, KMeansOptions,
};
use crate::tensorio::{FeatureTensor, ImageEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentOptions {
    /// Segments with more than `tau` patches are valid.
    pub tau: usize,
    pub weighting: EdgeWeighting,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            weighting: EdgeWeighting::Binary,
        }
    }
}

/// Affinity, thresholded graph, Louvain and connected-component split for
/// one image's `N x d` key features.
pub fn segment_image(
    image_id: &str,
    features: &FeatureTensor,
    grid: GridShape,
    options: SegmentOptions,
) -> Result<SegmentSet> {
    let (n, _) = features.matrix_dims()?;
    if n != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "image {image_id}: {n} feature rows for a {}x{} grid",
            grid.rows, grid.cols
        )));
    }
    let affinity = build_affinity(features)?;
    let graph = threshold_adjacency_with(&affinity, grid, options.weighting)?;
    let partition = louvain(&graph);
    Ok(split_components(&partition, grid, options.tau)?.with_image_id(image_id))
}

/// Crop specs of every valid segment, ordered by image id then segment id,
/// with feature rows numbered in that order.
pub fn build_crop_table(sets: &[SegmentSet], patch_side: usize) -> CropsManifest {
    let mut order: Vec<&SegmentSet> = sets.iter().collect();
    order.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let crops = order
        .into_iter()
        .flat_map(|s| make_crop_specs(s, patch_side))
        .collect();
    CropsManifest::new(patch_side, crops)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelOptions {
    pub k: usize,
    pub seed: u64,
    pub l2_normalize: bool,
    pub kmeans: KMeansOptions,
}

/// Clustering result in canonical crop order: `crops[i]` owns feature row
/// `i` and `model.assignment[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CropClustering {
    pub crops: Vec<CropRecord>,
    pub features: FeatureTensor,
    pub model: ClusterModel,
}

/// Clusters crop features. Rows are first put in canonical order (image id,
/// then segment id) so that a permuted crop table gives the same model.
pub fn cluster_crops(
    crops: &[CropRecord],
    features: &FeatureTensor,
    options: LabelOptions,
) -> Result<CropClustering> {
    check_cluster_count(options.k)?;
    let (rows, _) = features.matrix_dims()?;
    if rows != crops.len() {
        return Err(Error::DimensionMismatch(format!(
            "crop feature file has {rows} rows but the crops manifest lists {} crops",
            crops.len()
        )));
    }
    let mut order: Vec<usize> = (0..crops.len()).collect();
    order.sort_by(|&a, &b| {
        (&crops[a].image_id, crops[a].segment_id).cmp(&(&crops[b].image_id, crops[b].segment_id))
    });
    let mut source_rows = Vec::with_capacity(crops.len());
    let mut canonical = Vec::with_capacity(crops.len());
    for (i, &idx) in order.iter().enumerate() {
        let crop = &crops[idx];
        let row = crop
            .crop_feature_row
            .ok_or_else(|| Error::MissingCropFeature {
                image_id: crop.image_id.clone(),
                segment_id: crop.segment_id,
            })?;
        if row >= rows {
            return Err(Error::MissingCropFeature {
                image_id: crop.image_id.clone(),
                segment_id: crop.segment_id,
            });
        }
        source_rows.push(row);
        let mut c = crop.clone();
        c.crop_feature_row = Some(i);
        canonical.push(c);
    }
    let mut seen = vec![false; rows];
    for &r in &source_rows {
        if std::mem::replace(&mut seen[r], true) {
            return Err(Error::InvalidArgument(format!(
                "crop feature row {r} is claimed by two crops"
            )));
        }
    }
    let mut features = features.select_rows(&source_rows)?;
    if options.l2_normalize {
        features = l2_normalize_rows(&features)?;
    }
    let model = kmeans_with(&features, options.k, options.seed, options.kmeans)?;
    Ok(CropClustering {
        crops: canonical,
        features,
        model,
    })
}

/// Labels every image's segments from a clustering.
pub fn label_segments(sets: &[SegmentSet], clustering: &CropClustering) -> Result<Vec<SegmentSet>> {
    let mut by_image: HashMap<&str, Vec<CropRecord>> = HashMap::new();
    for c in &clustering.crops {
        by_image
            .entry(c.image_id.as_str())
            .or_default()
            .push(c.clone());
    }
    sets.iter()
        .map(|s| {
            let crops = by_image
                .get(s.image_id.as_str())
                .map_or(&[][..], Vec::as_slice);
            assign_segment_labels(s, crops, &clustering.model)
        })
        .collect()
}

/// Pseudo mask at the resized side `T`, upsampled to the original `H x W`.
pub fn render_mask(labeled: &SegmentSet, entry: &ImageEntry) -> Result<PseudoMask> {
    let mask = synthesize_mask(labeled, entry.patch_side as usize)?;
    resize_mask(&mask, entry.height as usize, entry.width as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub images: usize,
    pub total_segments: usize,
    pub valid_segments: usize,
    /// Share of valid segments in percent; zero when there are none.
    pub valid_percent: f64,
}

pub fn summarize_segments(sets: &[SegmentSet]) -> SegmentSummary {
    let total: usize = sets.iter().map(|s| s.segments.len()).sum();
    let valid: usize = sets.iter().map(SegmentSet::valid_count).sum();
    SegmentSummary {
        images: sets.len(),
        total_segments: total,
        valid_segments: valid,
        valid_percent: if total == 0 {
            0.0
        } else {
            100.0 * valid as f64 / total as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudolabel::patch_mean_crop_features;

    /// Left half one direction, right half the opposite.
    fn halves(grid: GridShape) -> FeatureTensor {
        let rows: Vec<Vec<f32>> = (0..grid.len())
            .map(|i| {
                let (_, c) = grid.cell(i);
                let jitter = (i % 3) as f32 * 0.01;
                if c < grid.cols / 2 {
                    vec![1.0, jitter]
                } else {
                    vec![-1.0, jitter]
                }
            })
            .collect();
        FeatureTensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn two_halves_become_two_segments() {
        let grid = GridShape::new(4, 6);
        let set = segment_image("a", &halves(grid), grid, SegmentOptions::default()).unwrap();
        assert_eq!(set.segments.len(), 2);
        assert_eq!(set.valid_count(), 2);
        set.check_invariants().unwrap();
    }

    #[test]
    fn row_count_must_match_grid() {
        let grid = GridShape::new(4, 6);
        assert!(segment_image(
            "a",
            &halves(grid),
            GridShape::new(3, 3),
            SegmentOptions::default()
        )
        .is_err());
    }

    #[test]
    fn end_to_end_two_images() {
        let grid = GridShape::new(4, 6);
        let feats = vec![halves(grid), halves(grid)];
        let sets: Vec<SegmentSet> = ["b", "a"]
            .iter()
            .zip(&feats)
            .map(|(id, f)| segment_image(id, f, grid, SegmentOptions::default()).unwrap())
            .collect();
        let table = build_crop_table(&sets, 8);
        assert_eq!(table.crops[0].image_id, "a");
        let crop_feats = patch_mean_crop_features(&table.crops, &sets, &feats).unwrap();
        let options = LabelOptions {
            k: 2,
            seed: 0,
            l2_normalize: false,
            kmeans: KMeansOptions::default(),
        };
        let clustering = cluster_crops(&table.crops, &crop_feats, options).unwrap();
        let labeled = label_segments(&sets, &clustering).unwrap();
        let entry = ImageEntry {
            image_id: "b".into(),
            source_path: "b.png".into(),
            height: 10,
            width: 12,
            resized_side: 32,
            patch_side: 8,
            grid_rows: 4,
            grid_cols: 6,
            feature_path: "b.dtf".into(),
            gt_mask_path: None,
        };
        let mask = render_mask(&labeled[0], &entry).unwrap();
        assert_eq!((mask.height(), mask.width()), (10, 12));
        assert_ne!(mask.get(0, 0), mask.get(0, 11));
    }

    #[test]
    fn permuted_crop_rows_give_same_model() {
        let grid = GridShape::new(4, 6);
        let feats = vec![halves(grid), halves(grid)];
        let sets: Vec<SegmentSet> = ["a", "b"]
            .iter()
            .zip(&feats)
            .map(|(id, f)| segment_image(id, f, grid, SegmentOptions::default()).unwrap())
            .collect();
        let table = build_crop_table(&sets, 8);
        let crop_feats = patch_mean_crop_features(&table.crops, &sets, &feats).unwrap();
        let options = LabelOptions {
            k: 2,
            seed: 3,
            l2_normalize: true,
            kmeans: KMeansOptions::default(),
        };
        let straight = cluster_crops(&table.crops, &crop_feats, options).unwrap();

        let perm = [2, 0, 3, 1];
        let permuted_crops: Vec<CropRecord> = perm
            .iter()
            .enumerate()
            .map(|(new_row, &old)| {
                let mut c = table.crops[old].clone();
                c.crop_feature_row = Some(new_row);
                c
            })
            .collect();
        let permuted_feats = crop_feats.select_rows(&perm).unwrap();
        let shuffled = cluster_crops(&permuted_crops, &permuted_feats, options).unwrap();
        assert_eq!(straight, shuffled);
    }

    #[test]
    fn row_count_mismatch_is_reported() {
        let crops = vec![];
        let feats = FeatureTensor::from_rows(&[vec![1.0f32]]).unwrap();
        let options = LabelOptions {
            k: 1,
            seed: 0,
            l2_normalize: false,
            kmeans: KMeansOptions::default(),
        };
        let err = cluster_crops(&crops, &feats, options).unwrap_err();
        assert!(err.to_string().contains("1 rows"), "{err}");
    }

    #[test]
    fn summary_counts() {
        let grid = GridShape::new(4, 6);
        let set = segment_image(
            "a",
            &halves(grid),
            grid,
            SegmentOptions {
                tau: 12,
                ..Default::default()
            },
        )
        .unwrap();
        let s = summarize_segments(&[set]);
        assert_eq!((s.total_segments, s.valid_segments), (2, 0));
        assert_eq!(s.valid_percent, 0.0);
    }
}
