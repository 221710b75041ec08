//! File-backed pipeline stages. Each stage reads what earlier stages left in
//! the run directory, so any of them can be re-run on its own.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use patchseg::affinity::EdgeWeighting;
use patchseg::denoise::{export_training_set, ExportSummary, MaskFile};
use patchseg::evalkit::{
    accumulate_confusion, evaluate_confusion, iou_bar_chart_svg, per_class_csv, write_report_json,
    ConfusionMatrix, EvalProtocol, EvalReport, LabelMerge, MergeTable,
};
use patchseg::graphseg::SegmentSet;
use patchseg::maskgen::{colorize, read_mask_png, resize_mask, write_mask_png};
use patchseg::pipeline::{
    build_crop_table, cluster_crops, label_segments, render_mask, segment_image,
    summarize_segments, CropClustering, LabelOptions, SegmentOptions,
};
use patchseg::pseudolabel::{
    patch_mean_crop_features, retrieve_neighbors, CropsManifest, KMeansOptions, Neighbor,
};
use patchseg::tensorio::{
    load_manifest, read_tensor, resolve_path, write_tensor, DatasetManifest, ImageEntry,
};
use patchseg::FeatureTensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{config_bail, ensure_dir, ConfigError, RunConfig, SUIM};
use crate::runreport::{write_pretty, RunReport};

pub struct Ctx {
    pub config: RunConfig,
    pub manifest: DatasetManifest,
    pool: rayon::ThreadPool,
}

impl Ctx {
    pub fn new(config: RunConfig) -> Result<Self> {
        let manifest = load_manifest(&config.manifest)?;
        if manifest.images.is_empty() {
            bail!("manifest {} lists no images", config.manifest.display());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .context("cannot start worker pool")?;
        ensure_dir(&config.run_dir())?;
        Ok(Self {
            config,
            manifest,
            pool,
        })
    }

    pub fn run_dir(&self) -> PathBuf {
        self.config.run_dir()
    }

    fn resolve(&self, p: &str) -> PathBuf {
        resolve_path(&self.config.manifest, p)
    }

    /// Maps `f` over the manifest images on the worker pool; results keep
    /// manifest order.
    fn per_image<T: Send>(&self, f: impl Fn(&ImageEntry) -> Result<T> + Sync) -> Result<Vec<T>> {
        self.pool
            .install(|| self.manifest.images.par_iter().map(&f).collect())
    }

    fn patch_side(&self) -> Result<usize> {
        let t = self.manifest.images[0].patch_side;
        if self.manifest.images.iter().any(|e| e.patch_side != t) {
            bail!("images use different patch sides; run them as separate datasets");
        }
        Ok(t as usize)
    }

    fn read_patch_features(&self, entry: &ImageEntry) -> Result<FeatureTensor> {
        let path = self.resolve(&entry.feature_path);
        read_tensor(&path).with_context(|| format!("patch features of image {}", entry.image_id))
    }

    /// Cluster count: `--k`, else the ground-truth class count.
    pub fn cluster_count(&self) -> Result<usize> {
        match self.config.k.or_else(|| self.manifest.class_count()) {
            Some(k) => Ok(k),
            None => config_bail!("no K given and the manifest declares no class count"),
        }
    }

    pub fn sweep_ks(&self) -> Result<Vec<usize>> {
        if let Some(ks) = &self.config.k_sweep {
            return Ok(ks.clone());
        }
        match self.manifest.class_count() {
            Some(c) => Ok((c..=(3 * c).min(255)).collect()),
            None => config_bail!("no K sweep given and the manifest declares no class count"),
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))
}

fn segments_path(run: &Path, image_id: &str) -> PathBuf {
    run.join("segments").join(format!("{image_id}.json"))
}

fn labels_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join("labels").join(format!("{image_id}.json"))
}

fn mask_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join("masks").join(format!("{image_id}_pseudo.png"))
}

// ---------------------------------------------------------------- segment

pub fn segment(ctx: &Ctx, report: &mut RunReport) -> Result<Vec<SegmentSet>> {
    let run = ctx.run_dir();
    ensure_dir(&run.join("segments"))?;
    let options = SegmentOptions {
        tau: ctx.config.tau,
        weighting: if ctx.config.weighted_edges {
            EdgeWeighting::Affinity
        } else {
            EdgeWeighting::Binary
        },
    };
    let sets = ctx.per_image(|entry| {
        let features = ctx.read_patch_features(entry)?;
        let set = segment_image(&entry.image_id, &features, entry.grid(), options)?;
        write_pretty(&set, &segments_path(&run, &entry.image_id))?;
        Ok(set)
    })?;
    let crops = build_crop_table(&sets, ctx.patch_side()?);
    write_pretty(&crops, &run.join("crops.json"))?;
    let summary = summarize_segments(&sets);
    write_pretty(&summary, &run.join("segment_summary.json"))?;
    report.total_segments = Some(summary.total_segments);
    report.valid_segments = Some(summary.valid_segments);
    report.valid_percent = Some(summary.valid_percent);
    Ok(sets)
}

pub fn load_segments(ctx: &Ctx) -> Result<Vec<SegmentSet>> {
    let run = ctx.run_dir();
    ctx.per_image(|entry| {
        read_json(&segments_path(&run, &entry.image_id))
            .context("segments missing; run `segment` first")
    })
}

// ---------------------------------------------------------------- label

/// One line of `clusters.json` per crop.
#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterMember {
    pub image_id: String,
    pub segment_id: usize,
    pub row: usize,
    pub cluster: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub seed: u64,
    pub l2_normalize: bool,
    pub dim: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub inertia_trace: Vec<f64>,
    pub cluster_sizes: Vec<usize>,
    pub crops: Vec<ClusterMember>,
}

/// Crop features for the crops manifest: the external file if configured,
/// otherwise patch-feature means written to `crop_features.dtf`.
pub fn crop_features(ctx: &Ctx, sets: &[SegmentSet]) -> Result<(CropsManifest, FeatureTensor)> {
    let run = ctx.run_dir();
    let crops: CropsManifest = read_json(&run.join("crops.json"))
        .context("crops manifest missing; run `segment` first")?;
    if crops.crops.is_empty() {
        bail!("no valid segments");
    }
    let features = match &ctx.config.crop_features {
        Some(path) => read_tensor(path)
            .with_context(|| format!("cannot load crop features {}", path.display()))?,
        None => {
            let patch = ctx.per_image(|entry| ctx.read_patch_features(entry))?;
            let features = patch_mean_crop_features(&crops.crops, sets, &patch)?;
            write_tensor(&features, run.join("crop_features.dtf"))?;
            features
        }
    };
    Ok((crops, features))
}

/// Clusters crops with `k` clusters and writes labels, centroids and the
/// cluster summary under `dir`.
pub fn label_into(
    ctx: &Ctx,
    sets: &[SegmentSet],
    crops: &CropsManifest,
    features: &FeatureTensor,
    k: usize,
    dir: &Path,
) -> Result<(CropClustering, Vec<SegmentSet>)> {
    ensure_dir(&dir.join("labels"))?;
    let options = LabelOptions {
        k,
        seed: ctx.config.seed,
        l2_normalize: ctx.config.l2_normalize,
        kmeans: KMeansOptions::default(),
    };
    let clustering = cluster_crops(&crops.crops, features, options)?;
    let labeled = label_segments(sets, &clustering)?;
    for set in &labeled {
        write_pretty(set, &labels_path(dir, &set.image_id))?;
    }
    let model = &clustering.model;
    let centroids = FeatureTensor::new(
        vec![model.k, model.dim],
        model.centroids.iter().map(|&v| v as f32).collect(),
    )?;
    write_tensor(&centroids, dir.join("centroids.dtf"))?;
    write_tensor(&clustering.features, dir.join("clustered_features.dtf"))?;
    let summary = ClusterSummary {
        k: model.k,
        seed: ctx.config.seed,
        l2_normalize: ctx.config.l2_normalize,
        dim: model.dim,
        iterations: model.iterations,
        inertia: model.inertia,
        inertia_trace: model.inertia_trace.clone(),
        cluster_sizes: model.cluster_sizes(),
        crops: clustering
            .crops
            .iter()
            .enumerate()
            .map(|(row, c)| ClusterMember {
                image_id: c.image_id.clone(),
                segment_id: c.segment_id,
                row,
                cluster: model.assignment[row],
            })
            .collect(),
    };
    write_pretty(&summary, &dir.join("clusters.json"))?;
    Ok((clustering, labeled))
}

pub fn load_labels(ctx: &Ctx, dir: &Path) -> Result<Vec<SegmentSet>> {
    ctx.per_image(|entry| {
        read_json(&labels_path(dir, &entry.image_id)).context("labels missing; run `label` first")
    })
}

pub fn cluster_summary(dir: &Path) -> Result<ClusterSummary> {
    read_json(&dir.join("clusters.json")).context("cluster summary missing; run `label` first")
}

// ---------------------------------------------------------------- mask

pub fn mask_into(ctx: &Ctx, labeled: &[SegmentSet], dir: &Path) -> Result<()> {
    ensure_dir(&dir.join("masks"))?;
    let color = ctx.config.color;
    ctx.pool.install(|| {
        ctx.manifest
            .images
            .par_iter()
            .zip(labeled.par_iter())
            .try_for_each(|(entry, set)| -> Result<()> {
                if set.image_id != entry.image_id {
                    bail!("labels for {} out of manifest order", set.image_id);
                }
                let mask = render_mask(set, entry)?;
                write_mask_png(&mask, mask_path(dir, &entry.image_id))?;
                if color {
                    let preview = dir
                        .join("masks")
                        .join(format!("{}_color.png", entry.image_id));
                    colorize(&mask)
                        .save(&preview)
                        .with_context(|| format!("cannot write {}", preview.display()))?;
                }
                Ok(())
            })
    })
}

// ---------------------------------------------------------------- eval

pub fn has_ground_truth(ctx: &Ctx) -> bool {
    ctx.manifest.images.iter().all(|e| e.gt_mask_path.is_some())
}

/// Merge table from `--label-merge` if given, else from the manifest.
fn protocol(ctx: &Ctx, k: usize) -> Result<(EvalProtocol, Option<Vec<String>>)> {
    let table = match &ctx.config.label_merge {
        Some(p) if p == Path::new(SUIM) => Some(MergeTable::suim()),
        Some(p) => Some(MergeTable::load(p).map_err(|e| ConfigError(e.to_string()))?),
        None => None,
    };
    let names = table.as_ref().and_then(|t| t.class_names.clone());
    let merge = if let Some(t) = &table {
        t.to_label_merge().map_err(|e| ConfigError(e.to_string()))?
    } else {
        match ctx.manifest.parsed_label_merge() {
            Some(map) => LabelMerge::from_map(&map, ctx.manifest.num_classes)?,
            None => match ctx.manifest.class_count() {
                Some(c) => LabelMerge::identity(c)?,
                None => config_bail!("manifest declares neither num_classes nor label_merge"),
            },
        }
    };
    if k < merge.num_classes() {
        config_bail!(
            "K = {k} is smaller than the {} ground-truth classes",
            merge.num_classes()
        );
    }
    let protocol = EvalProtocol {
        num_clusters: k,
        merge,
        drop_unlabeled: ctx.config.drop_unlabeled,
        gt_ignore: ctx.config.gt_ignore,
    };
    Ok((protocol, names))
}

/// Scores the masks under `dir/masks` and writes `dir/eval/`.
pub fn eval_into(ctx: &Ctx, k: usize, dir: &Path) -> Result<EvalReport> {
    if !has_ground_truth(ctx) {
        bail!("ground truth required for eval");
    }
    let (protocol, class_names) = protocol(ctx, k)?;
    let per_image = ctx.per_image(|entry| {
        let gt_rel = entry.gt_mask_path.as_deref().expect("checked above");
        let gt = read_mask_png(ctx.resolve(gt_rel))
            .with_context(|| format!("ground truth of image {}", entry.image_id))?;
        let mut pred = read_mask_png(mask_path(dir, &entry.image_id)).with_context(|| {
            format!("pseudo mask of image {}; run `mask` first", entry.image_id)
        })?;
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            pred = resize_mask(&pred, gt.height(), gt.width())?;
        }
        Ok(accumulate_confusion(&pred, &gt, &protocol)?)
    })?;
    let mut total = ConfusionMatrix::zeros(protocol.merge.num_classes(), k);
    for cm in &per_image {
        total.merge(cm)?;
    }
    let report = evaluate_confusion(&total)?;
    let eval_dir = dir.join("eval");
    ensure_dir(&eval_dir)?;
    write_report_json(&report, eval_dir.join("report.json"))?;
    fs::write(eval_dir.join("per_class.csv"), per_class_csv(&report))?;
    fs::write(
        eval_dir.join("iou.svg"),
        iou_bar_chart_svg(&report, class_names.as_deref()),
    )?;
    Ok(report)
}

// ---------------------------------------------------------------- sweep

pub fn sweep(
    ctx: &Ctx,
    sets: &[SegmentSet],
    report: &mut RunReport,
) -> Result<Vec<(usize, EvalReport)>> {
    let ks = ctx.sweep_ks()?;
    if !has_ground_truth(ctx) {
        bail!("ground truth required for eval");
    }
    let (crops, features) = crop_features(ctx, sets)?;
    let root = ctx.run_dir().join("sweep");
    let mut results = Vec::with_capacity(ks.len());
    for k in ks {
        let dir = root.join(format!("k{k}"));
        let (_, labeled) = label_into(ctx, sets, &crops, &features, k, &dir)?;
        mask_into(ctx, &labeled, &dir)?;
        results.push((k, eval_into(ctx, k, &dir)?));
    }
    let mut csv = String::from("k,miou,pixel_accuracy,mean_f1\n");
    for (k, r) in &results {
        let _ = writeln!(
            csv,
            "{k},{:.6},{:.6},{:.6}",
            r.miou, r.pixel_accuracy, r.mean_f1
        );
    }
    fs::write(root.join("summary.csv"), csv)?;
    report.notes.retain(|n| !n.starts_with("sweep"));
    report.notes.push(format!(
        "sweep over K = {:?}",
        results.iter().map(|r| r.0).collect::<Vec<_>>()
    ));
    Ok(results)
}

// ---------------------------------------------------------------- export-denoise

pub fn export_denoise(ctx: &Ctx) -> Result<ExportSummary> {
    let run = ctx.run_dir();
    let k = cluster_summary(&run)?.k;
    let masks = ctx.per_image(|entry| {
        read_mask_png(mask_path(&run, &entry.image_id))
            .with_context(|| format!("pseudo mask of image {}; run `mask` first", entry.image_id))
    })?;
    let mut manifest = ctx.manifest.clone();
    for entry in &mut manifest.images {
        entry.source_path = absolute(&ctx.resolve(&entry.source_path));
    }
    let files: Vec<MaskFile<'_>> = manifest
        .images
        .iter()
        .zip(&masks)
        .map(|(entry, mask)| MaskFile {
            image_id: &entry.image_id,
            mask_path: absolute(&mask_path(&run, &entry.image_id)),
            mask,
        })
        .collect();
    let out = run.join("denoise");
    ensure_dir(&out)?;
    let (_, summary) = export_training_set(
        &manifest,
        &files,
        k,
        ctx.config.theta,
        out.join("manifest.json"),
    )?;
    Ok(summary)
}

fn absolute(p: &Path) -> String {
    std::path::absolute(p)
        .unwrap_or_else(|_| p.to_path_buf())
        .display()
        .to_string()
}

// ---------------------------------------------------------------- retrieve

#[derive(Debug, Serialize)]
pub struct RetrievedSegment {
    pub image_id: String,
    pub segment_id: usize,
    pub cluster: usize,
    pub distance: f64,
}

pub fn retrieve(
    ctx: &Ctx,
    image_id: &str,
    segment_id: usize,
    top: usize,
) -> Result<Vec<RetrievedSegment>> {
    let run = ctx.run_dir();
    let summary = cluster_summary(&run)?;
    let features = read_tensor(run.join("clustered_features.dtf"))?;
    let query = summary
        .crops
        .iter()
        .find(|c| c.image_id == image_id && c.segment_id == segment_id)
        .ok_or_else(|| {
            anyhow!("image {image_id} segment {segment_id} is not a clustered (valid) segment")
        })?;
    let neighbors: Vec<Neighbor> = retrieve_neighbors(&features, query.row, top)?;
    let found: Vec<RetrievedSegment> = neighbors
        .iter()
        .map(|n| {
            let c = &summary.crops[n.row];
            RetrievedSegment {
                image_id: c.image_id.clone(),
                segment_id: c.segment_id,
                cluster: c.cluster,
                distance: n.distance,
            }
        })
        .collect();
    let dir = run.join("retrieval");
    ensure_dir(&dir)?;
    write_pretty(&found, &dir.join(format!("{image_id}_s{segment_id}.json")))?;
    Ok(found)
}
