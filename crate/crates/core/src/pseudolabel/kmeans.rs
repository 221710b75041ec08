//! Lloyd's k-means with k-means++ seeding.
//!
//! Everything is accumulated in f64 in fixed index order, and the PRNG is a
//! seeded ChaCha stream, so a given `(features, k, seed)` always produces the
//! same model on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::FeatureTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { max_iter: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    /// `k x dim`, row-major.
    pub centroids: Vec<f64>,
    /// Cluster of every input row.
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Nearest centroid of `point`, lowest id on ties.
    pub fn predict(&self, point: &[f64]) -> usize {
        nearest(&self.centroids, self.k, self.dim, point).0
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[f64], k: usize, dim: usize, point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..k {
        let d = sq_dist(&centroids[c * dim..(c + 1) * dim], point);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub fn kmeans(features: &FeatureTensor, k: usize, seed: u64) -> Result<ClusterModel> {
    kmeans_with(features, k, seed, KMeansOptions::default())
}

pub fn kmeans_with(
    features: &FeatureTensor,
    k: usize,
    seed: u64,
    options: KMeansOptions,
) -> Result<ClusterModel> {
    let (m, dim) = features.matrix_dims()?;
    if k == 0 {
        return Err(Error::InvalidArgument("k-means needs K >= 1".into()));
    }
    if m < k {
        return Err(Error::InvalidArgument(format!(
            "k-means needs at least K = {k} points, got {m}"
        )));
    }
    let points: Vec<f64> = features.data().iter().map(|&v| v as f64).collect();
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(&points, m, dim, k, &mut rng);

    let mut assignment = vec![usize::MAX; m];
    let mut distances = vec![0.0; m];
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..options.max_iter.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for i in 0..m {
            let (c, d) = nearest(&centroids, k, dim, point(i));
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            distances[i] = d;
            inertia += d;
        }
        trace.push(inertia);
        if !changed || iterations == options.max_iter {
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..m {
            let c = assignment[i];
            counts[c] += 1;
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        let mut taken = vec![false; m];
        for c in 0..k {
            let row = &mut centroids[c * dim..(c + 1) * dim];
            if counts[c] > 0 {
                let n = counts[c] as f64;
                for (dst, &s) in row.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *dst = s / n;
                }
            } else {
                // reseed at the point farthest from its own centroid
                let mut far = None;
                for i in 0..m {
                    if taken[i] {
                        continue;
                    }
                    if far.is_none_or(|(_, d)| distances[i] > d) {
                        far = Some((i, distances[i]));
                    }
                }
                let (i, _) = far.expect("m >= k leaves a candidate");
                taken[i] = true;
                row.copy_from_slice(point(i));
            }
        }
    }

    let inertia = *trace.last().expect("at least one iteration");
    Ok(ClusterModel {
        k,
        dim,
        centroids,
        assignment,
        inertia,
        iterations,
        inertia_trace: trace,
    })
}

/// k-means++ seeding: first centre uniform, the rest drawn with probability
/// proportional to the squared distance to the nearest chosen centre.
fn plus_plus_init(
    points: &[f64],
    m: usize,
    dim: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..m));
    let mut d2: Vec<f64> = (0..m)
        .map(|i| sq_dist(point(i), point(chosen[0])))
        .collect();

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            // every remaining point coincides with a centre
            (0..m).find(|i| !chosen.contains(i)).expect("m >= k")
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            let nd = sq_dist(point(i), point(next));
            if nd < *d {
                *d = nd;
            }
        }
    }

    let mut centroids = Vec::with_capacity(k * dim);
    for &i in &chosen {
        centroids.extend_from_slice(point(i));
    }
    centroids
}

/// Scales every row to unit Euclidean norm; all-zero rows are left as is.
pub fn l2_normalize_rows(features: &FeatureTensor) -> Result<FeatureTensor> {
    let (m, _) = features.matrix_dims()?;
    let mut data = Vec::with_capacity(features.data().len());
    for i in 0..m {
        let row = features.row(i);
        let norm = row
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            data.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
        } else {
            data.extend_from_slice(row);
        }
    }
    FeatureTensor::new(features.shape().to_vec(), data)
}
