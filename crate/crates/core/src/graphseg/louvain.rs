//! Deterministic Louvain.
//!
//! Phase 1 scans nodes in ascending index order and moves each node to the
//! neighbouring community with the largest strictly positive modularity gain,
//! preferring the lowest community id on ties, until a full scan moves
//! nothing. Phase 2 collapses communities into super-nodes (self-loop weight
//! `A_cc` is twice the internal weight, inter-community weights are summed)
//! and the process repeats on the smaller graph until a level makes no move.

use crate::affinity::PatchGraph;

use super::{modularity, Partition};

/// Upper bound on phase-1 sweeps per level. Every accepted move strictly
/// increases modularity, so this only matters for float-weighted graphs.
const MAX_SWEEPS: usize = 1_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LouvainOutcome {
    pub partition: Partition,
    /// Modularity of the original graph after each completed level,
    /// starting with the all-singleton partition. Empty for edgeless graphs.
    pub level_modularity: Vec<f64>,
}

pub fn louvain(g: &PatchGraph) -> Partition {
    louvain_levels(g).partition
}

pub fn louvain_levels(g: &PatchGraph) -> LouvainOutcome {
    let n = g.node_count();
    if g.total_weight() <= 0.0 {
        return LouvainOutcome {
            partition: Partition::singletons(n),
            level_modularity: Vec::new(),
        };
    }

    let mut level = LevelGraph::from_patch_graph(g);
    // community of every original node, in current-level node ids
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut history = vec![modularity(g, &Partition::singletons(n)).expect("m > 0")];

    loop {
        let (labels, moved) = level.local_moving();
        if !moved {
            break;
        }
        let (renumbered, count) = renumber(&labels);
        for c in node_of.iter_mut() {
            *c = renumbered[*c];
        }
        history.push(modularity(g, &Partition::from_labels(&node_of)).expect("m > 0"));
        level = level.aggregate(&renumbered, count);
    }

    LouvainOutcome {
        partition: Partition::from_labels(&node_of),
        level_modularity: history,
    }
}

/// Relabels communities 0.. in order of first appearance by node index.
fn renumber(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = vec![usize::MAX; labels.len()];
    let mut next = 0;
    let out = labels
        .iter()
        .map(|&c| {
            if map[c] == usize::MAX {
                map[c] = next;
                next += 1;
            }
            map[c]
        })
        .collect();
    (out, next)
}

/// Weighted graph of one Louvain level. Neighbour lists exclude the node
/// itself and are sorted by neighbour id; self-loops live in `self_loop`.
struct LevelGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
    degree: Vec<f64>,
    two_m: f64,
}

impl LevelGraph {
    fn from_patch_graph(g: &PatchGraph) -> Self {
        let n = g.node_count();
        let mut adj = vec![Vec::new(); n];
        for e in g.edges() {
            adj[e.a].push((e.b, e.weight));
            adj[e.b].push((e.a, e.weight));
        }
        for list in adj.iter_mut() {
            list.sort_by_key(|&(j, _)| j);
        }
        Self::with_adjacency(adj, vec![0.0; n])
    }

    fn with_adjacency(adj: Vec<Vec<(usize, f64)>>, self_loop: Vec<f64>) -> Self {
        let degree: Vec<f64> = adj
            .iter()
            .zip(&self_loop)
            .map(|(list, &sl)| sl + list.iter().map(|&(_, w)| w).sum::<f64>())
            .collect();
        let two_m = degree.iter().sum();
        Self {
            adj,
            self_loop,
            degree,
            two_m,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Phase 1. Returns the community of every node (ids are node ids of the
    /// community's founding node) and whether any node moved.
    ///
    /// Gains are compared scaled by `2m²`: moving node `i` into community `c`
    /// scores `2m·k_i,c − Σtot_c·k_i`, where `k_i,c` is the weight from `i`
    /// to `c` and `Σtot_c` excludes `i`. For unit weights these are exact
    /// integers, so ties are exact.
    fn local_moving(&self) -> (Vec<usize>, bool) {
        let n = self.len();
        let mut community: Vec<usize> = (0..n).collect();
        let mut total = self.degree.clone();
        let mut link = vec![0.0; n];
        let mut seen = vec![false; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut moved_any = false;

        for _ in 0..MAX_SWEEPS {
            let mut moved = false;
            for i in 0..n {
                let own = community[i];
                let ki = self.degree[i];

                for &(j, w) in &self.adj[i] {
                    let c = community[j];
                    if !seen[c] {
                        seen[c] = true;
                        touched.push(c);
                    }
                    link[c] += w;
                }
                touched.sort_unstable();

                total[own] -= ki;
                let score = |c: usize, link_c: f64| self.two_m * link_c - total[c] * ki;
                let mut best = own;
                let mut best_score = score(own, link[own]);
                for &c in &touched {
                    if c == own {
                        continue;
                    }
                    let s = score(c, link[c]);
                    if s > best_score {
                        best = c;
                        best_score = s;
                    }
                }
                total[best] += ki;

                if best != own {
                    community[i] = best;
                    moved = true;
                }
                for &c in &touched {
                    link[c] = 0.0;
                    seen[c] = false;
                }
                touched.clear();
            }
            if !moved {
                break;
            }
            moved_any = true;
        }
        (community, moved_any)
    }

    /// Phase 2: one super-node per community.
    fn aggregate(&self, community: &[usize], count: usize) -> Self {
        let mut self_loop = vec![0.0; count];
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); count];
        for i in 0..self.len() {
            let ci = community[i];
            self_loop[ci] += self.self_loop[i];
            for &(j, w) in &self.adj[i] {
                let cj = community[j];
                if ci == cj {
                    // visited from both endpoints, so the loop gets 2x the edge
                    self_loop[ci] += w;
                } else {
                    adj[ci].push((cj, w));
                }
            }
        }
        for list in adj.iter_mut() {
            list.sort_by_key(|&(j, _)| j);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(list.len());
            for &(j, w) in list.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += w,
                    _ => merged.push((j, w)),
                }
            }
            *list = merged;
        }
        Self::with_adjacency(adj, self_loop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn graph(n: usize, edges: &[(usize, usize)]) -> PatchGraph {
        PatchGraph::from_edges(
            GridShape::new(1, n),
            edges.iter().map(|&(a, b)| (a, b, 1.0)),
        )
        .unwrap()
    }

    fn clique_edges(nodes: std::ops::Range<usize>) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in nodes.clone() {
            for b in (a + 1)..nodes.end {
                out.push((a, b));
            }
        }
        out
    }

    #[test]
    fn two_cliques_with_bridge() {
        let mut edges = clique_edges(0..4);
        edges.extend(clique_edges(4..8));
        edges.push((3, 4));
        let p = louvain(&graph(8, &edges));
        assert_eq!(p.community_of(), &[0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn dyad_merges() {
        let p = louvain(&graph(2, &[(0, 1)]));
        assert_eq!(p.community_of(), &[0, 0]);
    }

    #[test]
    fn edgeless_gives_singletons() {
        let out = louvain_levels(&graph(3, &[]));
        assert_eq!(out.partition.community_of(), &[0, 1, 2]);
        assert!(out.level_modularity.is_empty());
    }

    #[test]
    fn isolated_nodes_stay_alone() {
        let p = louvain(&graph(5, &[(0, 2), (2, 4)]));
        assert_eq!(p.community_of(), &[0, 1, 0, 2, 0]);
    }

    #[test]
    fn ring_of_cliques_needs_aggregation() {
        // Six triangles in a ring; the optimum groups whole triangles.
        let mut edges = Vec::new();
        for t in 0..6 {
            let base = 3 * t;
            edges.extend([(base, base + 1), (base + 1, base + 2), (base, base + 2)]);
            edges.push((base + 2, (base + 3) % 18));
        }
        let g = graph(18, &edges);
        let out = louvain_levels(&g);
        for w in out.level_modularity.windows(2) {
            assert!(w[1] > w[0]);
        }
        for members in out.partition.members() {
            assert_eq!(members.len() % 3, 0, "{members:?}");
        }
    }

    #[test]
    fn weighted_graph_terminates() {
        let edges = [
            (0, 1, 0.3),
            (1, 2, 2.7),
            (0, 2, 0.1),
            (2, 3, 1e-3),
            (3, 4, 5.5),
        ];
        let g = PatchGraph::from_edges(GridShape::new(1, 5), edges).unwrap();
        let p = louvain(&g);
        assert_eq!(p.community_of(), &[0, 0, 0, 1, 1]);
    }
}
