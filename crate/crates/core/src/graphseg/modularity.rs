use crate::affinity::PatchGraph;
use crate::error::{Error, Result};

use super::Partition;

/// Newman modularity of `p` on `g`:
///
/// `Q = 1/(2m) Σ_ij [A_ij − k_i k_j / (2m)] δ(c_i, c_j)`
///
/// over ordered node pairs, with `m` the total undirected edge weight.
pub fn modularity(g: &PatchGraph, p: &Partition) -> Result<f64> {
    p.check_len(g.node_count())?;
    let m = g.total_weight();
    if m <= 0.0 {
        return Err(Error::EdgelessGraph);
    }
    let two_m = 2.0 * m;
    let k = p.community_count();
    let labels = p.community_of();
    let mut internal = vec![0.0; k];
    let mut total = vec![0.0; k];
    for e in g.edges() {
        total[labels[e.a]] += e.weight;
        total[labels[e.b]] += e.weight;
        if labels[e.a] == labels[e.b] {
            // ordered pairs: (a, b) and (b, a)
            internal[labels[e.a]] += 2.0 * e.weight;
        }
    }
    let q = internal
        .iter()
        .zip(&total)
        .map(|(&inside, &tot)| inside / two_m - (tot / two_m) * (tot / two_m))
        .sum();
    Ok(q)
}
