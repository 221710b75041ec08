//! Maximum-score injective assignment of classes to clusters.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Cluster matched to each class.
    pub class_to_cluster: Vec<usize>,
    pub total: f64,
}

impl Assignment {
    /// Class matched to each of `num_clusters` clusters, if any.
    pub fn cluster_to_class(&self, num_clusters: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; num_clusters];
        for (class, &cluster) in self.class_to_cluster.iter().enumerate() {
            out[cluster] = Some(class);
        }
        out
    }
}

/// Hungarian matching maximizing `Σ score[c][σ(c)]` over injective `σ`.
///
/// `score` is `C x K` with `K >= C`. Among optimal assignments the
/// lexicographically smallest `(σ(0), σ(1), ...)` is returned.
pub fn hungarian_max(score: &[Vec<f64>]) -> Result<Assignment> {
    let c = score.len();
    if c == 0 {
        return Err(Error::InvalidArgument("score matrix has no rows".into()));
    }
    let k = score[0].len();
    if score.iter().any(|row| row.len() != k) {
        return Err(Error::DimensionMismatch(
            "score matrix rows differ in length".into(),
        ));
    }
    if k < c {
        return Err(Error::InvalidArgument(format!(
            "need at least as many clusters as classes (K = {k} < C = {c})"
        )));
    }
    if score.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "score matrix has non-finite entries".into(),
        ));
    }

    let all_rows: Vec<usize> = (0..c).collect();
    let all_cols: Vec<usize> = (0..k).collect();
    let optimum = best_total(score, &all_rows, &all_cols);
    let scale = score.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs())) * c as f64;
    let tol = 1e-12 * scale;

    // Fix classes one at a time to the smallest cluster that keeps the
    // optimum reachable.
    let mut class_to_cluster = Vec::with_capacity(c);
    let mut used = vec![false; k];
    let mut fixed = 0.0;
    for class in 0..c {
        let rest_rows: Vec<usize> = ((class + 1)..c).collect();
        let mut pick = None;
        for cluster in 0..k {
            if used[cluster] {
                continue;
            }
            let rest_cols: Vec<usize> = (0..k).filter(|&j| !used[j] && j != cluster).collect();
            let reachable =
                fixed + score[class][cluster] + best_total(score, &rest_rows, &rest_cols);
            if reachable >= optimum - tol {
                pick = Some(cluster);
                break;
            }
        }
        let cluster = pick.expect("some cluster attains the optimum");
        used[cluster] = true;
        fixed += score[class][cluster];
        class_to_cluster.push(cluster);
    }

    let total = class_to_cluster
        .iter()
        .enumerate()
        .map(|(class, &cluster)| score[class][cluster])
        .sum();
    Ok(Assignment {
        class_to_cluster,
        total,
    })
}

/// Optimal total of the sub-problem on the given rows and columns.
fn best_total(score: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let cost: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| cols.iter().map(|&j| -score[r][j]).collect())
        .collect();
    let assign = min_cost_assignment(&cost);
    rows.iter()
        .zip(&assign)
        .map(|(&r, &j)| score[r][cols[j]])
        .sum()
}

/// Kuhn-Munkres with potentials on an `n x m` cost matrix, `n <= m`.
///
/// Equivalent to solving the square problem padded with zero-cost dummy
/// rows. Returns the column of every row.
pub(crate) fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    // 1-based; index 0 is the virtual column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}
