//! Segment discovery on the patch graph.
//!
//! Louvain modularity maximization yields communities of patches; each
//! community is then split into its 4-connected pieces on the patch grid, and
//! pieces with too few patches are flagged as noise.

mod components;
mod louvain;
mod modularity;

pub use components::{split_components, Segment, SegmentSet, DEFAULT_TAU};
pub use louvain::{louvain, louvain_levels, LouvainOutcome};
pub use modularity::modularity;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assignment of every node to a community. Ids are contiguous `0..I`,
/// numbered in order of each community's smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    community_of: Vec<usize>,
}

impl Partition {
    /// Canonicalizes arbitrary labels: communities are renumbered by first
    /// occurrence in node order.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let community_of = labels
            .iter()
            .map(|&l| {
                let next = remap.len();
                *remap.entry(l).or_insert(next)
            })
            .collect();
        Self { community_of }
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            community_of: (0..n).collect(),
        }
    }

    pub fn single_community(n: usize) -> Self {
        Self {
            community_of: vec![0; n],
        }
    }

    pub fn community_of(&self) -> &[usize] {
        &self.community_of
    }

    pub fn node_count(&self) -> usize {
        self.community_of.len()
    }

    pub fn community_count(&self) -> usize {
        self.community_of.iter().max().map_or(0, |&m| m + 1)
    }

    /// Members of each community, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.community_count()];
        for (node, &c) in self.community_of.iter().enumerate() {
            out[c].push(node);
        }
        out
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.community_of.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "partition covers {} nodes, graph has {n}",
                self.community_of.len()
            )));
        }
        Ok(())
    }
}
