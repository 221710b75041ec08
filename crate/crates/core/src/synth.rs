//! Synthetic datasets with known ground truth.
//!
//! Each image is a patch grid of rectangular class blobs on background.
//! Patch key features are class centres plus Gaussian noise; the centres form
//! a centred simplex, so features of the same class have positive inner
//! products and features of different classes negative ones. Ground-truth
//! masks are written at an original size that differs from the resized side,
//! using the same nearest-neighbour mapping as mask upsampling.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridShape;
use crate::maskgen::{colorize, write_mask_png, PseudoMask};
use crate::tensorio::{save_manifest, write_tensor, DatasetManifest, FeatureTensor, ImageEntry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_images: usize,
    /// Ground-truth classes including background (class 0).
    pub num_classes: usize,
    pub grid_side: usize,
    pub patch_side: usize,
    pub dim: usize,
    /// Distance between class centres.
    pub separation: f64,
    /// Per-dimension noise standard deviation, relative to `separation`.
    pub noise: f64,
    /// Adds a 2x2 blob to some images; it ends up as a noisy segment.
    pub tiny_blobs: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_images: 20,
            num_classes: 4,
            grid_side: 14,
            patch_side: 8,
            dim: 32,
            separation: 1.0,
            noise: 0.05,
            tiny_blobs: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub entry: ImageEntry,
    /// Class of every patch, row-major.
    pub patch_classes: Vec<u8>,
    pub features: FeatureTensor,
    pub gt: PseudoMask,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<SynthImage>,
}

/// Class centres `s/√2 · (e_i − 1/C · 1)` embedded in the first `C` of `dim`
/// coordinates; pairwise distance is exactly `s`.
pub fn simplex_centres(num_classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let scale = separation / 2f64.sqrt();
    (0..num_classes)
        .map(|i| {
            let mut c = vec![0.0; dim];
            for (j, v) in c.iter_mut().take(num_classes).enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                *v = scale * (e - 1.0 / num_classes as f64);
            }
            c
        })
        .collect()
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    if config.num_classes < 2 || config.num_classes > config.dim {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= classes <= dim, got {} classes in {} dims",
            config.num_classes, config.dim
        )));
    }
    if config.grid_side < 4 || config.patch_side == 0 || config.num_images == 0 {
        return Err(Error::InvalidArgument("degenerate synthetic layout".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centres = simplex_centres(config.num_classes, config.dim, config.separation);
    let noise = Normal::new(0.0, config.noise * config.separation)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let grid = GridShape::square(config.grid_side);
    let side = config.grid_side * config.patch_side;

    let mut images = Vec::with_capacity(config.num_images);
    for idx in 0..config.num_images {
        let image_id = format!("img{idx:03}");
        let mut classes = vec![0u8; grid.len()];
        let blobs = rng.random_range(1..=3);
        let max_side = (config.grid_side / 2).max(3);
        for _ in 0..blobs {
            let class = rng.random_range(1..config.num_classes) as u8;
            let h = rng.random_range(3..=max_side);
            let w = rng.random_range(3..=max_side);
            paint(&mut classes, grid, &mut rng, h, w, class);
        }
        if config.tiny_blobs && idx % 3 == 0 {
            let class = rng.random_range(1..config.num_classes) as u8;
            paint(&mut classes, grid, &mut rng, 2, 2, class);
        }

        let mut data = Vec::with_capacity(grid.len() * config.dim);
        for &c in &classes {
            for &v in &centres[c as usize] {
                data.push((v + noise.sample(&mut rng)) as f32);
            }
        }
        let features = FeatureTensor::new(vec![grid.len(), config.dim], data)?;

        let height = rng.random_range(side * 3 / 4..=side * 3 / 2);
        let width = rng.random_range(side * 3 / 4..=side * 3 / 2);
        let mut gt = Vec::with_capacity(height * width);
        for y in 0..height {
            let r = (y * side / height) / config.patch_side;
            for x in 0..width {
                let c = (x * side / width) / config.patch_side;
                gt.push(classes[grid.index(r, c)]);
            }
        }
        let gt = PseudoMask::new(height, width, gt)?;

        let entry = ImageEntry {
            image_id: image_id.clone(),
            source_path: format!("images/{image_id}.png"),
            height: height as u32,
            width: width as u32,
            resized_side: side as u32,
            patch_side: config.patch_side as u32,
            grid_rows: config.grid_side as u32,
            grid_cols: config.grid_side as u32,
            feature_path: format!("features/{image_id}.dtf"),
            gt_mask_path: Some(format!("gt/{image_id}.png")),
        };
        images.push(SynthImage {
            entry,
            patch_classes: classes,
            features,
            gt,
        });
    }
    let manifest = DatasetManifest {
        images: images.iter().map(|i| i.entry.clone()).collect(),
        label_merge: None,
        num_classes: Some(config.num_classes),
    };
    Ok(SynthDataset { manifest, images })
}

fn paint(classes: &mut [u8], grid: GridShape, rng: &mut ChaCha8Rng, h: usize, w: usize, class: u8) {
    let r0 = rng.random_range(0..=grid.rows - h);
    let c0 = rng.random_range(0..=grid.cols - w);
    for r in r0..r0 + h {
        for c in c0..c0 + w {
            classes[grid.index(r, c)] = class;
        }
    }
}

/// Writes `manifest.json`, features, ground-truth PNGs and colour previews
/// under `dir`. Returns the manifest path.
pub fn write_dataset(dataset: &SynthDataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    for sub in ["features", "gt", "images"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for img in &dataset.images {
        write_tensor(&img.features, dir.join(&img.entry.feature_path))?;
        let gt_path = img
            .entry
            .gt_mask_path
            .as_ref()
            .expect("synthetic images carry ground truth");
        write_mask_png(&img.gt, dir.join(gt_path))?;
        let preview = dir.join(&img.entry.source_path);
        colorize(&img.gt)
            .save_with_format(&preview, image::ImageFormat::Png)
            .map_err(|e| Error::Png {
                path: preview.clone(),
                message: e.to_string(),
            })?;
    }
    let manifest_path = dir.join("manifest.json");
    save_manifest(&dataset.manifest, &manifest_path)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::load_manifest;

    #[test]
    fn centres_are_equidistant() {
        let c = simplex_centres(4, 6, 2.0);
        for i in 0..4 {
            for j in 0..4 {
                let d: f64 = c[i]
                    .iter()
                    .zip(&c[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let want = if i == j { 0.0 } else { 2.0 };
                assert!((d - want).abs() < 1e-12);
                let dot: f64 = c[i].iter().zip(&c[j]).map(|(a, b)| a * b).sum();
                assert_eq!(dot > 0.0, i == j);
            }
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let cfg = SynthConfig {
            num_images: 3,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.gt, y.gt);
        }
    }

    #[test]
    fn written_dataset_loads() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&SynthConfig {
            num_images: 2,
            ..Default::default()
        })
        .unwrap();
        let path = write_dataset(&ds, dir.path()).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.images.len(), 2);
        assert_eq!(m.class_count(), Some(4));
        let gt = crate::maskgen::read_mask_png(dir.path().join("gt/img000.png")).unwrap();
        assert_eq!(gt, ds.images[0].gt);
    }
}
