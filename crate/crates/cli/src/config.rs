//! Run configuration: JSON file values overridden by command-line flags,
//! falling back to built-in defaults.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use patchseg::denoise::check_theta;
use patchseg::graphseg::DEFAULT_TAU;
use patchseg::pseudolabel::check_cluster_count;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Marks failures caused by the invocation rather than the data.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

macro_rules! config_bail {
    ($($arg:tt)*) => {
        return Err(anyhow::Error::new($crate::config::ConfigError(format!($($arg)*))))
    };
}
pub(crate) use config_bail;

/// Flags shared by every pipeline subcommand. Unset flags defer to the
/// config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output root; artifacts go to <out>/<run-id>/
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Segments need more than this many patches to be valid
    #[arg(long)]
    pub tau: Option<usize>,
    /// Number of pseudo-label clusters (defaults to the class count)
    #[arg(long)]
    pub k: Option<usize>,
    /// Cluster counts for `sweep`, e.g. 4,5,6
    #[arg(long, value_delimiter = ',')]
    pub k_sweep: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use affinity values as edge weights instead of 1
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub weighted_edges: Option<bool>,
    /// L2-normalize crop features before k-means
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub l2_normalize: Option<bool>,
    /// Dominant-class share at which a mask is left out of the denoise set
    #[arg(long)]
    pub theta: Option<f64>,
    /// Exclude UNLABELED predictions from scoring
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub drop_unlabeled: Option<bool>,
    /// Raw ground-truth value that is never scored
    #[arg(long)]
    pub gt_ignore: Option<u8>,
    /// Label-merge table JSON overriding the manifest's (`suim` selects the
    /// bundled underwater table)
    #[arg(long)]
    pub label_merge: Option<PathBuf>,
    /// Crop feature tensor from an external extractor; without it crops are
    /// embedded as the mean of their patch features
    #[arg(long)]
    pub crop_features: Option<PathBuf>,
    /// Worker threads for per-image stages
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also write colour previews of the masks
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub color: Option<bool>,
}

/// Everything a config file may set. Relative paths are taken relative to the
/// file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
    run_id: Option<String>,
    tau: Option<usize>,
    k: Option<usize>,
    k_sweep: Option<Vec<usize>>,
    seed: Option<u64>,
    weighted_edges: Option<bool>,
    l2_normalize: Option<bool>,
    theta: Option<f64>,
    drop_unlabeled: Option<bool>,
    gt_ignore: Option<u8>,
    label_merge: Option<PathBuf>,
    crop_features: Option<PathBuf>,
    jobs: Option<usize>,
    color: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub run_id: String,
    pub tau: usize,
    pub k: Option<usize>,
    pub k_sweep: Option<Vec<usize>>,
    pub seed: u64,
    pub weighted_edges: bool,
    pub l2_normalize: bool,
    pub theta: f64,
    pub drop_unlabeled: bool,
    pub gt_ignore: Option<u8>,
    pub label_merge: Option<PathBuf>,
    pub crop_features: Option<PathBuf>,
    #[serde(skip)]
    pub jobs: usize,
    pub color: bool,
}

pub const DEFAULT_THETA: f64 = 0.95;

/// `--label-merge` value selecting the bundled underwater table.
pub const SUIM: &str = "suim";

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let (file, base) = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    ConfigError(format!("cannot read config {}: {e}", path.display()))
                })?;
                let file: FileConfig = serde_json::from_str(&text)
                    .map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
                (
                    file,
                    path.parent().map(Path::to_path_buf).unwrap_or_default(),
                )
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        let rel = |p: Option<PathBuf>| p.map(|p| base.join(p));

        let Some(manifest) = args.manifest.clone().or(rel(file.manifest)) else {
            config_bail!("no manifest given (use --manifest or the config file)");
        };
        if !manifest.is_file() {
            config_bail!("manifest {} does not exist", manifest.display());
        }
        let label_merge = args.label_merge.clone().or_else(|| {
            file.label_merge.map(|p| {
                if p == Path::new(SUIM) {
                    p
                } else {
                    base.join(p)
                }
            })
        });
        if let Some(p) = &label_merge {
            if p != Path::new(SUIM) && !p.is_file() {
                config_bail!("label-merge table {} does not exist", p.display());
            }
        }
        let crop_features = args.crop_features.clone().or(rel(file.crop_features));
        if let Some(p) = &crop_features {
            if !p.is_file() {
                config_bail!("crop feature file {} does not exist", p.display());
            }
        }
        let config = RunConfig {
            manifest,
            out: args
                .out
                .clone()
                .or(rel(file.out))
                .unwrap_or_else(|| PathBuf::from("runs")),
            run_id: args
                .run_id
                .clone()
                .or(file.run_id)
                .unwrap_or_else(|| "default".into()),
            tau: args.tau.or(file.tau).unwrap_or(DEFAULT_TAU),
            k: args.k.or(file.k),
            k_sweep: args.k_sweep.clone().or(file.k_sweep),
            seed: args.seed.or(file.seed).unwrap_or(0),
            weighted_edges: args.weighted_edges.or(file.weighted_edges).unwrap_or(false),
            l2_normalize: args.l2_normalize.or(file.l2_normalize).unwrap_or(false),
            theta: args.theta.or(file.theta).unwrap_or(DEFAULT_THETA),
            drop_unlabeled: args.drop_unlabeled.or(file.drop_unlabeled).unwrap_or(true),
            gt_ignore: args.gt_ignore.or(file.gt_ignore),
            label_merge,
            crop_features,
            jobs: args
                .jobs
                .or(file.jobs)
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
            color: args.color.or(file.color).unwrap_or(false),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id == ".." {
            config_bail!("run id {:?} is not a plain directory name", self.run_id);
        }
        if let Some(k) = self.k {
            check_cluster_count(k).map_err(|e| ConfigError(e.to_string()))?;
        }
        if let Some(ks) = &self.k_sweep {
            if ks.is_empty() {
                config_bail!("empty K sweep");
            }
            for &k in ks {
                check_cluster_count(k).map_err(|e| ConfigError(e.to_string()))?;
            }
        }
        check_theta(self.theta).map_err(|e| ConfigError(e.to_string()))?;
        if self.jobs == 0 {
            config_bail!("jobs must be at least 1");
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(&self.run_id)
    }

    /// SHA-256 of the resolved configuration as JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}
