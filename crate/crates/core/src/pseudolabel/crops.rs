use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphseg::SegmentSet;
use crate::tensorio::FeatureTensor;

/// Pixel value the extractor writes over pixels outside the segment.
pub const CROP_FILL_VALUE: u8 = 0;

/// Half-open pixel rectangle `[y0, y1) x [x0, x1)` in resized-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRecord {
    pub image_id: String,
    pub segment_id: usize,
    pub bbox: BBox,
    /// Patch-resolution mask of the segment inside the bbox, one row per
    /// patch row; 1 marks the segment's own patches.
    pub patch_mask: Vec<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_feature_row: Option<usize>,
}

/// Ordered crop list handed to the extractor. Row `i` of the returned crop
/// feature file belongs to `crops[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropsManifest {
    pub fill_value: u8,
    pub patch_side: usize,
    pub crops: Vec<CropRecord>,
}

impl CropsManifest {
    /// Numbers the crop feature rows in list order.
    pub fn new(patch_side: usize, mut crops: Vec<CropRecord>) -> Self {
        for (i, c) in crops.iter_mut().enumerate() {
            c.crop_feature_row = Some(i);
        }
        Self {
            fill_value: CROP_FILL_VALUE,
            patch_side,
            crops,
        }
    }
}

/// One crop per valid segment, in segment order. Noisy segments are skipped.
pub fn make_crop_specs(segments: &SegmentSet, patch_side: usize) -> Vec<CropRecord> {
    let grid = segments.grid;
    segments
        .valid_segments()
        .map(|seg| {
            let cells: Vec<(usize, usize)> = seg.patches.iter().map(|&p| grid.cell(p)).collect();
            let min_r = cells.iter().map(|c| c.0).min().expect("non-empty segment");
            let max_r = cells.iter().map(|c| c.0).max().expect("non-empty segment");
            let min_c = cells.iter().map(|c| c.1).min().expect("non-empty segment");
            let max_c = cells.iter().map(|c| c.1).max().expect("non-empty segment");
            let mut patch_mask = vec![vec![0u8; max_c - min_c + 1]; max_r - min_r + 1];
            for &(r, c) in &cells {
                patch_mask[r - min_r][c - min_c] = 1;
            }
            CropRecord {
                image_id: segments.image_id.clone(),
                segment_id: seg.segment_id,
                bbox: BBox {
                    y0: patch_side * min_r,
                    x0: patch_side * min_c,
                    y1: patch_side * (max_r + 1),
                    x1: patch_side * (max_c + 1),
                },
                patch_mask,
                crop_feature_row: None,
            }
        })
        .collect()
}

/// Stand-in crop embedder for runs without an external extractor: the mean
/// of the segment's patch key features.
///
/// `sets` and `patch_features` are aligned per image; rows follow the order
/// of `crops`.
pub fn patch_mean_crop_features(
    crops: &[CropRecord],
    sets: &[SegmentSet],
    patch_features: &[FeatureTensor],
) -> Result<FeatureTensor> {
    if sets.len() != patch_features.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} segment sets but {} feature tensors",
            sets.len(),
            patch_features.len()
        )));
    }
    if crops.is_empty() {
        return Err(Error::InvalidArgument("no valid segments".into()));
    }
    let mut width = None;
    let mut data = Vec::new();
    for crop in crops {
        let idx = sets
            .iter()
            .position(|s| s.image_id == crop.image_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown image {}", crop.image_id)))?;
        let features = &patch_features[idx];
        let (rows, d) = features.matrix_dims()?;
        if *width.get_or_insert(d) != d {
            return Err(Error::DimensionMismatch(
                "patch feature widths differ".into(),
            ));
        }
        let seg =
            sets[idx]
                .segments
                .get(crop.segment_id)
                .ok_or_else(|| Error::MissingCropFeature {
                    image_id: crop.image_id.clone(),
                    segment_id: crop.segment_id,
                })?;
        let mut acc = vec![0.0f64; d];
        for &p in &seg.patches {
            if p >= rows {
                return Err(Error::DimensionMismatch(format!(
                    "patch {p} outside feature tensor of {rows} rows"
                )));
            }
            for (a, &v) in acc.iter_mut().zip(features.row(p)) {
                *a += v as f64;
            }
        }
        let count = seg.patches.len() as f64;
        data.extend(acc.into_iter().map(|a| (a / count) as f32));
    }
    FeatureTensor::new(vec![crops.len(), width.unwrap_or(0)], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphseg::{split_components, Partition};
    use crate::grid::GridShape;

    fn set_with(grid: GridShape, members: &[usize], tau: usize) -> SegmentSet {
        let mut labels = vec![0usize; grid.len()];
        for &m in members {
            labels[m] = 1;
        }
        split_components(&Partition::from_labels(&labels), grid, tau).unwrap()
    }

    fn crop_for(set: &SegmentSet, patch: usize, t: usize) -> CropRecord {
        let seg = set
            .segments
            .iter()
            .find(|s| s.patches.contains(&patch))
            .unwrap();
        make_crop_specs(set, t)
            .into_iter()
            .find(|c| c.segment_id == seg.segment_id)
            .unwrap()
    }

    #[test]
    fn diagonal_pair_bbox() {
        // cells (0,0) and (1,1) are not 4-adjacent; build the record directly
        // from a segment holding both
        let grid = GridShape::new(3, 3);
        let mut set = set_with(grid, &[], 0);
        set.segments[0].patches = vec![0, 4];
        set.segments[0].patch_count = 2;
        let crops = make_crop_specs(&set, 8);
        assert_eq!(
            crops[0].bbox,
            BBox {
                y0: 0,
                x0: 0,
                y1: 16,
                x1: 16
            }
        );
        assert_eq!(crops[0].patch_mask, vec![vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn single_patch_bbox() {
        let grid = GridShape::new(4, 5);
        let set = set_with(grid, &[grid.index(2, 3)], 0);
        let crop = crop_for(&set, grid.index(2, 3), 4);
        assert_eq!(
            crop.bbox,
            BBox {
                y0: 8,
                x0: 12,
                y1: 12,
                x1: 16
            }
        );
        assert_eq!(crop.patch_mask, vec![vec![1]]);
    }

    #[test]
    fn full_grid_bbox() {
        let grid = GridShape::square(28);
        let set = set_with(grid, &[], 5);
        let crops = make_crop_specs(&set, 8);
        assert_eq!(crops.len(), 1);
        assert_eq!(
            crops[0].bbox,
            BBox {
                y0: 0,
                x0: 0,
                y1: 224,
                x1: 224
            }
        );
    }

    #[test]
    fn one_record_per_valid_segment() {
        let grid = GridShape::new(6, 6);
        // 2x2 block (noisy) and 3x3 block (valid) inside background
        let mut members = vec![0, 1, 6, 7];
        for r in 3..6 {
            for c in 3..6 {
                members.push(grid.index(r, c));
            }
        }
        let set = set_with(grid, &members, 5);
        let crops = make_crop_specs(&set, 8);
        assert_eq!(crops.len(), set.valid_count());
        for c in &crops {
            assert_eq!(c.bbox.height() % 8, 0);
            assert_eq!(c.bbox.width() % 8, 0);
            let seg = &set.segments[c.segment_id];
            let ones: usize = c.patch_mask.iter().flatten().map(|&v| v as usize).sum();
            assert_eq!(ones, seg.patch_count);
        }
    }

    #[test]
    fn patch_mean_embedding() {
        let grid = GridShape::new(1, 8);
        let set = split_components(&Partition::single_community(8), grid, 5)
            .unwrap()
            .with_image_id("a");
        let rows: Vec<[f32; 2]> = (0..8).map(|i| [i as f32, 1.0]).collect();
        let features = FeatureTensor::from_rows(&rows).unwrap();
        let crops = CropsManifest::new(8, make_crop_specs(&set, 8)).crops;
        let out = patch_mean_crop_features(&crops, &[set], &[features]).unwrap();
        assert_eq!(out.shape(), &[1, 2]);
        assert_eq!(out.data(), &[3.5, 1.0]);
    }
}
