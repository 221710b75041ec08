//! Patch affinity matrix and its thresholded adjacency graph.
//!
//! The affinity of two patches is the dot product of their key features. Two
//! patches share an edge when their affinity is strictly positive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridShape;
use crate::tensorio::FeatureTensor;

/// Symmetric `n x n` matrix of pairwise key-feature dot products.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.values[m * self.n + n]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.n..(m + 1) * self.n]
    }

    /// Builds a matrix from row-major values, mirroring the upper triangle so
    /// the result is exactly symmetric.
    pub fn from_values(n: usize, mut values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "affinity of order {n} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                values[i * n + j] = values[j * n + i];
            }
        }
        Ok(Self { n, values })
    }
}

/// `features · featuresᵀ` for an `N x d` patch feature matrix.
///
/// Each unordered pair is computed once in f64 and mirrored.
pub fn build_affinity(features: &FeatureTensor) -> Result<AffinityMatrix> {
    let (n, d) = features.matrix_dims()?;
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("empty feature tensor".into()));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| features.row(i).iter().map(|&v| v as f64).collect())
        .collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            values[i * n + j] = dot;
            values[j * n + i] = dot;
        }
    }
    Ok(AffinityMatrix { n, values })
}

/// How edge weights are assigned to thresholded pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeWeighting {
    /// Every edge weighs 1.0.
    #[default]
    Binary,
    /// Edges carry their (positive) affinity value.
    Affinity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Undirected graph over patch indices, without self-loops.
///
/// Edges are stored once with `a < b`, sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGraph {
    n: usize,
    edges: Vec<Edge>,
    grid: GridShape,
}

impl PatchGraph {
    /// Builds a graph from an edge list. Self-loops are dropped and duplicate
    /// pairs summed.
    pub fn from_edges(
        grid: GridShape,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let n = grid.len();
        let mut list: Vec<Edge> = Vec::new();
        for (a, b, weight) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            if !(weight.is_finite() && weight > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) has non-positive weight {weight}"
                )));
            }
            if a == b {
                continue;
            }
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            list.push(Edge { a, b, weight });
        }
        list.sort_by_key(|e| (e.a, e.b));
        let mut edges: Vec<Edge> = Vec::with_capacity(list.len());
        for e in list {
            match edges.last_mut() {
                Some(last) if last.a == e.a && last.b == e.b => last.weight += e.weight,
                _ => edges.push(e),
            }
        }
        Ok(Self { n, edges, grid })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    /// Total edge weight, each undirected edge counted once.
    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    /// Weighted degree of every node.
    pub fn degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.n];
        for e in &self.edges {
            deg[e.a] += e.weight;
            deg[e.b] += e.weight;
        }
        deg
    }
}

/// Binary adjacency: edge `{m, n}` iff `a[m][n] > 0`, `m != n`.
pub fn threshold_adjacency(a: &AffinityMatrix, grid: GridShape) -> Result<PatchGraph> {
    threshold_adjacency_with(a, grid, EdgeWeighting::Binary)
}

pub fn threshold_adjacency_with(
    a: &AffinityMatrix,
    grid: GridShape,
    weighting: EdgeWeighting,
) -> Result<PatchGraph> {
    if grid.len() != a.n() {
        return Err(Error::DimensionMismatch(format!(
            "grid {}x{} has {} cells but affinity is {}x{}",
            grid.rows,
            grid.cols,
            grid.len(),
            a.n(),
            a.n()
        )));
    }
    let mut edges = Vec::new();
    for m in 0..a.n() {
        let row = a.row(m);
        for (n, &value) in row.iter().enumerate().skip(m + 1) {
            if value > 0.0 {
                let weight = match weighting {
                    EdgeWeighting::Binary => 1.0,
                    EdgeWeighting::Affinity => value,
                };
                edges.push(Edge { a: m, b: n, weight });
            }
        }
    }
    Ok(PatchGraph {
        n: a.n(),
        edges,
        grid,
    })
}
