//! Label-merge tables stored as JSON.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::LabelMerge;

const SUIM_TABLE: &str = include_str!("../../data/suim_merge.json");

/// Raw ground-truth ids mapped to evaluation classes, with optional names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeTable {
    /// Raw id (decimal string) to class id.
    pub label_merge: BTreeMap<String, u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_names: Option<BTreeMap<String, String>>,
}

impl MergeTable {
    pub fn parse(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::json(path, e))
    }

    /// Underwater scenes: eight annotated classes folded into six, with plants
    /// and sea-floor merged into background. Raw ids follow the order
    /// background, divers, plants, wrecks, robots, reefs, fish, sea-floor.
    pub fn suim() -> Self {
        Self::parse(SUIM_TABLE).expect("bundled table is valid")
    }

    pub fn to_label_merge(&self) -> Result<LabelMerge> {
        let mut map = BTreeMap::new();
        for (raw, &class) in &self.label_merge {
            let raw: u8 = raw
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("merge key {raw:?} is not a u8 id")))?;
            map.insert(raw, class);
        }
        let merge = LabelMerge::from_map(&map, self.num_classes)?;
        if let Some(names) = &self.class_names {
            if names.len() != merge.num_classes() {
                return Err(Error::InvalidArgument(format!(
                    "{} class names for {} classes",
                    names.len(),
                    merge.num_classes()
                )));
            }
        }
        Ok(merge)
    }
}
