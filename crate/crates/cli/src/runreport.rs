use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Provenance of a run directory. Every stage invocation updates it in place,
/// so it accumulates timings of stages run separately.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Wall time per stage, seconds.
    pub stage_seconds: BTreeMap<String, f64>,
    pub total_segments: Option<usize>,
    pub valid_segments: Option<usize>,
    pub valid_percent: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub struct ReportHandle {
    path: PathBuf,
    pub report: RunReport,
}

impl ReportHandle {
    pub fn open(config: &RunConfig) -> Result<Self> {
        let path = config.run_dir().join("run_report.json");
        let mut report = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
            Err(_) => RunReport::default(),
        };
        let hash = config.hash();
        if report.config_hash != hash {
            // settings changed: earlier timings describe a different run
            report = RunReport::default();
        }
        report.tool_version = env!("CARGO_PKG_VERSION").to_string();
        report.config_hash = hash;
        report.seed = config.seed;
        report.config = serde_json::to_value(config)?;
        Ok(Self { path, report })
    }

    /// Runs `f` and records its wall time under `stage`.
    pub fn time<T>(
        &mut self,
        stage: &str,
        f: impl FnOnce(&mut RunReport) -> Result<T>,
    ) -> Result<T> {
        let start = Instant::now();
        let out = f(&mut self.report)?;
        self.report
            .stage_seconds
            .insert(stage.to_string(), start.elapsed().as_secs_f64());
        Ok(out)
    }

    pub fn save(&self) -> Result<()> {
        write_pretty(&self.report, &self.path)
    }
}

pub fn write_pretty<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}
