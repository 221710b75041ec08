use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridShape;

use super::Partition;

/// Segments need strictly more than this many patches to be valid.
pub const DEFAULT_TAU: usize = 5;

/// A 4-connected group of patches drawn from one community.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: usize,
    pub community: usize,
    /// Patch indices, ascending.
    pub patches: Vec<usize>,
    pub patch_count: usize,
    pub valid: bool,
    /// Pseudo-class, once assigned. Noisy segments stay `None`.
    #[serde(default)]
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSet {
    pub image_id: String,
    pub grid: GridShape,
    pub tau: usize,
    pub segments: Vec<Segment>,
}

impl SegmentSet {
    pub fn with_image_id(mut self, image_id: impl Into<String>) -> Self {
        self.image_id = image_id.into();
        self
    }

    pub fn valid_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.valid)
    }

    pub fn valid_count(&self) -> usize {
        self.valid_segments().count()
    }

    /// Segment id of every patch.
    pub fn segment_of_patch(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.grid.len()];
        for s in &self.segments {
            for &p in &s.patches {
                out[p] = s.segment_id;
            }
        }
        out
    }

    /// Checks coverage, disjointness, connectivity and the validity rule.
    pub fn check_invariants(&self) -> Result<()> {
        let mut owner = vec![usize::MAX; self.grid.len()];
        for (i, s) in self.segments.iter().enumerate() {
            if s.segment_id != i {
                return Err(Error::InvalidArgument(format!(
                    "segment at position {i} has id {}",
                    s.segment_id
                )));
            }
            if s.patches.is_empty() || s.patch_count != s.patches.len() {
                return Err(Error::InvalidArgument(format!(
                    "segment {i} patch_count {} disagrees with {} patches",
                    s.patch_count,
                    s.patches.len()
                )));
            }
            if s.valid != (s.patch_count > self.tau) {
                return Err(Error::InvalidArgument(format!(
                    "segment {i} validity flag violates tau = {}",
                    self.tau
                )));
            }
            for &p in &s.patches {
                if p >= owner.len() || owner[p] != usize::MAX {
                    return Err(Error::InvalidArgument(format!(
                        "patch {p} out of range or claimed twice"
                    )));
                }
                owner[p] = i;
            }
            // 4-connectivity within the segment
            let own: std::collections::HashSet<usize> = s.patches.iter().copied().collect();
            let mut stack = vec![s.patches[0]];
            let mut reached = std::collections::HashSet::from([s.patches[0]]);
            while let Some(p) = stack.pop() {
                for q in self.grid.neighbors4(p) {
                    if own.contains(&q) && reached.insert(q) {
                        stack.push(q);
                    }
                }
            }
            if reached.len() != own.len() {
                return Err(Error::InvalidArgument(format!(
                    "segment {i} is not 4-connected"
                )));
            }
        }
        if let Some(p) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::InvalidArgument(format!("patch {p} not covered")));
        }
        Ok(())
    }
}

/// Splits every community into its 4-connected components on the patch grid.
///
/// Segment ids follow (community id, smallest patch index). A segment is
/// valid when it has strictly more than `tau` patches.
pub fn split_components(p: &Partition, grid: GridShape, tau: usize) -> Result<SegmentSet> {
    p.check_len(grid.len())?;
    let labels = p.community_of();
    let mut visited = vec![false; grid.len()];
    let mut found: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..grid.len() {
        if visited[start] {
            continue;
        }
        let community = labels[start];
        visited[start] = true;
        stack.push(start);
        let mut patches = Vec::new();
        while let Some(cell) = stack.pop() {
            patches.push(cell);
            for q in grid.neighbors4(cell) {
                if !visited[q] && labels[q] == community {
                    visited[q] = true;
                    stack.push(q);
                }
            }
        }
        patches.sort_unstable();
        found.push((community, patches));
    }
    // scan order already gives ascending smallest index; the stable sort by
    // community keeps it within each community
    found.sort_by_key(|(community, _)| *community);
    let segments = found
        .into_iter()
        .enumerate()
        .map(|(segment_id, (community, patches))| Segment {
            segment_id,
            community,
            patch_count: patches.len(),
            valid: patches.len() > tau,
            patches,
            label: None,
        })
        .collect();
    Ok(SegmentSet {
        image_id: String::new(),
        grid,
        tau,
        segments,
    })
}
