//! Training-side pieces of mask de-noising: the cross-entropy that ignores
//! unlabeled pixels, the rule that drops masks dominated by one class, and the
//! dataset export consumed by an external segmentation trainer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskgen::{PseudoMask, UNLABELED};
use crate::tensorio::{write_json, DatasetManifest};

/// Guards `ln` against zero probabilities.
pub const LOG_EPS: f64 = 1e-12;

/// `K x H x W` per-pixel class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    num_classes: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ProbMap {
    /// Validates that every pixel holds a probability vector (entries `>= 0`,
    /// sum within `1e-6` of one).
    pub fn new(num_classes: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument("empty probability map".into()));
        }
        if values.len() != num_classes * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{num_classes}x{height}x{width} map needs {} values, got {}",
                num_classes * height * width,
                values.len()
            )));
        }
        let plane = height * width;
        for px in 0..plane {
            let mut sum = 0.0;
            for k in 0..num_classes {
                let v = values[k * plane + px];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "probability {v} at class {k}, pixel {px}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "pixel {px} probabilities sum to {sum}"
                )));
            }
        }
        Ok(Self {
            num_classes,
            height,
            width,
            values,
        })
    }

    pub fn uniform(num_classes: usize, height: usize, width: usize) -> Result<Self> {
        let p = 1.0 / num_classes as f64;
        Self::new(
            num_classes,
            height,
            width,
            vec![p; num_classes * height * width],
        )
    }

    /// One-hot encoding of a mask; UNLABELED pixels become uniform.
    pub fn one_hot(mask: &PseudoMask, num_classes: usize) -> Result<Self> {
        let plane = mask.height() * mask.width();
        let mut values = vec![0.0; num_classes * plane];
        for (px, &l) in mask.labels().iter().enumerate() {
            if l == UNLABELED {
                for k in 0..num_classes {
                    values[k * plane + px] = 1.0 / num_classes as f64;
                }
            } else if (l as usize) < num_classes {
                values[l as usize * plane + px] = 1.0;
            } else {
                return Err(Error::PredictionOutOfRange {
                    label: l,
                    num_clusters: num_classes,
                });
            }
        }
        Self::new(num_classes, mask.height(), mask.width(), values)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedLoss {
    /// Summed cross-entropy over labeled pixels.
    pub loss: f64,
    pub labeled_pixels: usize,
}

impl MaskedLoss {
    /// False when no pixel carried a label.
    pub fn has_supervision(&self) -> bool {
        self.labeled_pixels > 0
    }

    pub fn mean(&self) -> Option<f64> {
        self.has_supervision()
            .then(|| self.loss / self.labeled_pixels as f64)
    }
}

/// `Σ −ln(p[label] + ε)` over pixels whose label is not UNLABELED.
pub fn masked_cross_entropy(pred: &ProbMap, pseudo_gt: &PseudoMask) -> Result<MaskedLoss> {
    if (pred.height, pred.width) != (pseudo_gt.height(), pseudo_gt.width()) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs mask {}x{}",
            pred.height,
            pred.width,
            pseudo_gt.height(),
            pseudo_gt.width()
        )));
    }
    masked_cross_entropy_values(&pred.values, pred.num_classes, pseudo_gt)
}

/// Same loss on a raw `K x H x W` buffer without the simplex check, for
/// perturbation-based gradient checks.
pub fn masked_cross_entropy_values(
    values: &[f64],
    num_classes: usize,
    pseudo_gt: &PseudoMask,
) -> Result<MaskedLoss> {
    let plane = pseudo_gt.height() * pseudo_gt.width();
    if values.len() != num_classes * plane {
        return Err(Error::DimensionMismatch(format!(
            "{} values for {num_classes} classes of {plane} pixels",
            values.len()
        )));
    }
    let mut loss = 0.0;
    let mut labeled = 0;
    for (px, &l) in pseudo_gt.labels().iter().enumerate() {
        if l == UNLABELED {
            continue;
        }
        if l as usize >= num_classes {
            return Err(Error::PredictionOutOfRange {
                label: l,
                num_clusters: num_classes,
            });
        }
        loss -= (values[l as usize * plane + px] + LOG_EPS).ln();
        labeled += 1;
    }
    Ok(MaskedLoss {
        loss,
        labeled_pixels: labeled,
    })
}

/// Analytic gradient of [`masked_cross_entropy`] with respect to every entry:
/// `−1/(p + ε)` at labeled true-class coordinates, zero elsewhere.
pub fn masked_cross_entropy_grad(pred: &ProbMap, pseudo_gt: &PseudoMask) -> Result<Vec<f64>> {
    masked_cross_entropy(pred, pseudo_gt)?;
    let plane = pseudo_gt.height() * pseudo_gt.width();
    let mut grad = vec![0.0; pred.values.len()];
    for (px, &l) in pseudo_gt.labels().iter().enumerate() {
        if l != UNLABELED {
            let at = l as usize * plane + px;
            grad[at] = -1.0 / (pred.values[at] + LOG_EPS);
        }
    }
    Ok(grad)
}

/// Whether a mask is kept for training: dropped when one class holds at least
/// `theta` of the labeled pixels, or when nothing is labeled.
pub fn drop_dominant(mask: &PseudoMask, theta: f64) -> bool {
    debug_assert!(theta > 0.5 && theta <= 1.0);
    let hist = mask.histogram();
    let labeled: u64 = hist[..UNLABELED as usize].iter().sum();
    if labeled == 0 {
        return false;
    }
    let top = hist[..UNLABELED as usize]
        .iter()
        .copied()
        .max()
        .unwrap_or(0);
    (top as f64 / labeled as f64) < theta
}

pub fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.5 && theta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "dominance threshold {theta} must lie in (0.5, 1]"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub image: String,
    pub mask: String,
}

/// Manifest read by the external de-noising trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseManifest {
    pub pairs: Vec<TrainingPair>,
    pub num_classes: usize,
    pub ignore_index: u8,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub kept: usize,
    pub dropped: usize,
}

/// A pseudo mask and where it is stored, aligned with a manifest image.
pub struct MaskFile<'a> {
    pub image_id: &'a str,
    pub mask_path: String,
    pub mask: &'a PseudoMask,
}

/// Writes the trainer manifest for every mask that survives
/// [`drop_dominant`]. Image paths come from the dataset manifest.
pub fn export_training_set(
    manifest: &DatasetManifest,
    masks: &[MaskFile<'_>],
    num_classes: usize,
    theta: f64,
    out_path: impl AsRef<Path>,
) -> Result<(DenoiseManifest, ExportSummary)> {
    check_theta(theta)?;
    if masks.is_empty() {
        return Err(Error::NothingToExport);
    }
    let mut pairs = Vec::new();
    let mut dropped = 0;
    for m in masks {
        let entry = manifest
            .find(m.image_id)
            .ok_or_else(|| Error::Manifest(format!("mask for unknown image {}", m.image_id)))?;
        if drop_dominant(m.mask, theta) {
            pairs.push(TrainingPair {
                image: entry.source_path.clone(),
                mask: m.mask_path.clone(),
            });
        } else {
            dropped += 1;
        }
    }
    let summary = ExportSummary {
        kept: pairs.len(),
        dropped,
    };
    let out = DenoiseManifest {
        pairs,
        num_classes,
        ignore_index: UNLABELED,
        theta,
    };
    write_json(&out, out_path.as_ref())?;
    Ok((out, summary))
}
