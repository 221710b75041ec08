//! Unsupervised evaluation of pseudo masks against ground truth.
//!
//! Predicted clusters carry no class identity, so a single dataset-level
//! Hungarian matching on the intersection counts maps clusters to classes
//! before IoU, F1 and pixel accuracy are computed. With more clusters than
//! classes the unmatched clusters never score a true positive: their pixels
//! count as false negatives of their ground-truth class.

mod hungarian;
mod report;
mod tables;

pub use hungarian::{hungarian_max, Assignment};
pub use report::{iou_bar_chart_svg, per_class_csv, write_report_json};
pub use tables::MergeTable;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskgen::{PseudoMask, UNLABELED};

/// Maps raw ground-truth ids onto `num_classes` evaluation classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMerge {
    table: [Option<u8>; 256],
    num_classes: usize,
}

impl LabelMerge {
    /// Raw ids `0..num_classes` map to themselves.
    pub fn identity(num_classes: usize) -> Result<Self> {
        if num_classes == 0 || num_classes > 255 {
            return Err(Error::InvalidArgument(format!(
                "class count {num_classes} must be in 1..=255"
            )));
        }
        let mut table = [None; 256];
        for (i, slot) in table.iter_mut().enumerate().take(num_classes) {
            *slot = Some(i as u8);
        }
        Ok(Self { table, num_classes })
    }

    pub fn from_map(map: &BTreeMap<u8, u8>, num_classes: Option<usize>) -> Result<Self> {
        let derived = map.values().max().map_or(0, |&v| v as usize + 1);
        let num_classes = num_classes.unwrap_or(derived);
        if num_classes == 0 || derived > num_classes {
            return Err(Error::InvalidArgument(format!(
                "merge table targets {derived} classes but C = {num_classes}"
            )));
        }
        let mut table = [None; 256];
        for (&raw, &class) in map {
            table[raw as usize] = Some(class);
        }
        Ok(Self { table, num_classes })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_of(&self, raw: u8) -> Option<u8> {
        self.table[raw as usize]
    }
}

/// Evaluation settings shared by every image of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalProtocol {
    pub num_clusters: usize,
    pub merge: LabelMerge,
    /// Skip pixels predicted UNLABELED (initial-mask protocol). Otherwise they
    /// count as misses of their ground-truth class.
    pub drop_unlabeled: bool,
    /// Raw ground-truth value excluded from scoring, if any.
    pub gt_ignore: Option<u8>,
}

/// `C x K` pixel counts (rows: ground-truth classes, columns: clusters).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub num_clusters: usize,
    pub counts: Vec<u64>,
    /// Pixels of each class predicted UNLABELED and not dropped.
    pub unlabeled: Vec<u64>,
    /// Pixels left out of scoring.
    pub ignored_pixels: u64,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize, num_clusters: usize) -> Self {
        Self {
            num_classes,
            num_clusters,
            counts: vec![0; num_classes * num_clusters],
            unlabeled: vec![0; num_classes],
            ignored_pixels: 0,
        }
    }

    #[inline]
    pub fn get(&self, class: usize, cluster: usize) -> u64 {
        self.counts[class * self.num_clusters + cluster]
    }

    pub fn total_pixels(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.unlabeled.iter().sum::<u64>() + self.ignored_pixels
    }

    /// Pixels that take part in scoring.
    pub fn scored_pixels(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.unlabeled.iter().sum::<u64>()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if (self.num_classes, self.num_clusters) != (other.num_classes, other.num_clusters) {
            return Err(Error::DimensionMismatch(format!(
                "cannot merge {}x{} confusion into {}x{}",
                other.num_classes, other.num_clusters, self.num_classes, self.num_clusters
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.unlabeled.iter_mut().zip(&other.unlabeled) {
            *a += b;
        }
        self.ignored_pixels += other.ignored_pixels;
        Ok(())
    }

    /// Hungarian score matrix: raw intersection counts.
    pub fn score_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.num_classes)
            .map(|c| {
                (0..self.num_clusters)
                    .map(|k| self.get(c, k) as f64)
                    .collect()
            })
            .collect()
    }
}

/// Tallies one prediction against its ground truth.
pub fn accumulate_confusion(
    pred: &PseudoMask,
    gt: &PseudoMask,
    protocol: &EvalProtocol,
) -> Result<ConfusionMatrix> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let c = protocol.merge.num_classes();
    let k = protocol.num_clusters;
    let mut cm = ConfusionMatrix::zeros(c, k);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if protocol.gt_ignore == Some(g) {
            cm.ignored_pixels += 1;
            continue;
        }
        let class = protocol.merge.class_of(g).ok_or(Error::UnknownGtLabel(g))? as usize;
        if p == UNLABELED {
            if protocol.drop_unlabeled {
                cm.ignored_pixels += 1;
            } else {
                cm.unlabeled[class] += 1;
            }
            continue;
        }
        if p as usize >= k {
            return Err(Error::PredictionOutOfRange {
                label: p,
                num_clusters: k,
            });
        }
        cm.counts[class * k + p as usize] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: usize,
    /// Matched cluster.
    pub cluster: usize,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    /// `None` when the class and its cluster are both empty.
    pub iou: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_classes: usize,
    pub num_clusters: usize,
    /// Class assigned to each cluster; `None` for unmatched clusters.
    pub cluster_to_class: Vec<Option<usize>>,
    pub per_class: Vec<ClassScore>,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub mean_f1: f64,
    pub scored_pixels: u64,
    pub ignored_pixels: u64,
    pub confusion: ConfusionMatrix,
}

/// Scores a confusion matrix under a class-to-cluster mapping.
///
/// Means run over classes with a defined IoU (non-empty union); with every
/// ground-truth class present that is all `C` classes.
pub fn score(cm: &ConfusionMatrix, class_to_cluster: &[usize]) -> Result<EvalReport> {
    let (c, k) = (cm.num_classes, cm.num_clusters);
    if class_to_cluster.len() != c {
        return Err(Error::DimensionMismatch(format!(
            "mapping covers {} classes, confusion has {c}",
            class_to_cluster.len()
        )));
    }
    let mut cluster_to_class = vec![None; k];
    for (class, &cluster) in class_to_cluster.iter().enumerate() {
        if cluster >= k || cluster_to_class[cluster].is_some() {
            return Err(Error::InvalidArgument(format!(
                "mapping is not injective into {k} clusters"
            )));
        }
        cluster_to_class[cluster] = Some(class);
    }

    let mut per_class = Vec::with_capacity(c);
    let mut tp_total = 0u64;
    for (class, &cluster) in class_to_cluster.iter().enumerate() {
        let tp = cm.get(class, cluster);
        let row: u64 = (0..k).map(|j| cm.get(class, j)).sum::<u64>() + cm.unlabeled[class];
        let col: u64 = (0..c).map(|i| cm.get(i, cluster)).sum();
        let fp = col - tp;
        let fn_ = row - tp;
        let union = tp + fp + fn_;
        let (iou, f1) = if union == 0 {
            (None, None)
        } else {
            (
                Some(tp as f64 / union as f64),
                Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64),
            )
        };
        tp_total += tp;
        per_class.push(ClassScore {
            class,
            cluster,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            iou,
            f1,
        });
    }

    let mean = |values: Vec<f64>| {
        if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        }
    };
    let miou = mean(per_class.iter().filter_map(|s| s.iou).collect());
    let mean_f1 = mean(per_class.iter().filter_map(|s| s.f1).collect());
    let scored = cm.scored_pixels();
    let pixel_accuracy = if scored == 0 {
        0.0
    } else {
        tp_total as f64 / scored as f64
    };

    Ok(EvalReport {
        num_classes: c,
        num_clusters: k,
        cluster_to_class,
        per_class,
        miou,
        pixel_accuracy,
        mean_f1,
        scored_pixels: scored,
        ignored_pixels: cm.ignored_pixels,
        confusion: cm.clone(),
    })
}

/// Dataset-level confusion, one Hungarian matching, then [`score`].
pub fn evaluate_dataset(
    preds: &[PseudoMask],
    gts: &[PseudoMask],
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    let mut total = ConfusionMatrix::zeros(protocol.merge.num_classes(), protocol.num_clusters);
    for (pred, gt) in preds.iter().zip(gts) {
        total.merge(&accumulate_confusion(pred, gt, protocol)?)?;
    }
    evaluate_confusion(&total)
}

/// Matching and scoring of an already accumulated confusion matrix.
pub fn evaluate_confusion(cm: &ConfusionMatrix) -> Result<EvalReport> {
    let assignment = hungarian_max(&cm.score_matrix())?;
    score(cm, &assignment.class_to_cluster)
}
