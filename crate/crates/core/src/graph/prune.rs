//! Connectivity repair: every strongly connected component other than the
//! largest one is joined to the largest with one bidirectional bridge at the
//! closest node pair. The result is a single SCC, so walks of any length can
//! start from any node.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adjacency, scc_from_adjacency, Edge, EdgeKind, GestureGraph};
use crate::error::{Error, Result};

/// Bridge pair `u <-> v` with `u` in the largest component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bridge {
    pub u: usize,
    pub v: usize,
    pub distance: f64,
}

/// Closest `(u, v)` pair between the largest component and each other
/// component. Ties go to the lexicographically lowest `(u, v)`.
pub fn bridge_components<F>(adj: &[Vec<usize>], dist: F) -> Result<Vec<Bridge>>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    let scc = scc_from_adjacency(adj);
    let hub = &scc.components[scc.largest];
    scc.components
        .par_iter()
        .enumerate()
        .filter(|(k, _)| *k != scc.largest)
        .map(|(_, comp)| {
            let mut best: Option<Bridge> = None;
            for &u in hub {
                for &v in comp {
                    let d = dist(u, v)?;
                    if best.is_none_or(|b| d < b.distance) {
                        best = Some(Bridge { u, v, distance: d });
                    }
                }
            }
            // components are non-empty, so a candidate always exists
            Ok(best.expect("empty component"))
        })
        .collect()
}

/// Adds bridge edges (kind `bridge`) so the graph becomes strongly
/// connected. Nodes and existing edges are untouched; a bridge direction
/// that already exists as an edge is not duplicated.
pub fn prune_graph(graph: &GestureGraph) -> Result<GestureGraph> {
    let bridges = bridge_components(&graph.adjacency(), |u, v| graph.node_distance(u, v))?;
    Ok(apply_bridges(graph, &bridges))
}

pub fn apply_bridges(graph: &GestureGraph, bridges: &[Bridge]) -> GestureGraph {
    let mut out = graph.clone();
    add_bridge_edges(&mut out.edges, bridges);
    out
}

/// Appends both directions of every bridge that is not already an edge,
/// then sorts by `(src, dst)`.
pub fn add_bridge_edges(edges: &mut Vec<Edge>, bridges: &[Bridge]) {
    let existing: HashSet<(usize, usize)> = edges.iter().map(|e| (e.src, e.dst)).collect();
    for b in bridges {
        for (src, dst) in [(b.u, b.v), (b.v, b.u)] {
            if !existing.contains(&(src, dst)) {
                edges.push(Edge {
                    src,
                    dst,
                    distance: b.distance,
                    kind: EdgeKind::Bridge,
                });
            }
        }
    }
    edges.sort_by_key(|e| (e.src, e.dst));
}

/// Graph given only by its edges and a dense `n x n` distance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeListGraph {
    pub nodes: usize,
    pub edges: Vec<Edge>,
    /// Row-major node distances.
    pub distances: Vec<f64>,
}

impl EdgeListGraph {
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes;
        if n == 0 {
            return Err(Error::Validation("graph has no nodes".into()));
        }
        if self.distances.len() != n * n {
            return Err(Error::Shape(format!(
                "{} distances for {n} nodes, expected {}",
                self.distances.len(),
                n * n
            )));
        }
        if self.distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Validation("distances must be finite and non-negative".into()));
        }
        if let Some(e) = self.edges.iter().find(|e| e.src >= n || e.dst >= n) {
            return Err(Error::Validation(format!("edge {} -> {} out of range", e.src, e.dst)));
        }
        Ok(())
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        adjacency(self.nodes, &self.edges)
    }

    pub fn prune(&self) -> Result<(EdgeListGraph, Vec<Bridge>)> {
        self.validate()?;
        let n = self.nodes;
        let bridges = bridge_components(&self.adjacency(), |u, v| Ok(self.distances[u * n + v]))?;
        let mut out = self.clone();
        add_bridge_edges(&mut out.edges, &bridges);
        Ok((out, bridges))
    }
}

/// Monte-Carlo estimate of the probability that a uniform random walk over
/// `path_len` nodes, starting at a uniformly drawn node, reaches a node with
/// no outgoing edge before it completes. Trial `k` draws from its own
/// ChaCha8 stream `k`, so the estimate is independent of thread count.
pub fn dead_end_probability(graph: &GestureGraph, path_len: usize, trials: usize, seed: u64) -> f64 {
    dead_end_rate(&graph.adjacency(), path_len, trials, seed)
}

pub fn dead_end_rate(adj: &[Vec<usize>], path_len: usize, trials: usize, seed: u64) -> f64 {
    if adj.is_empty() || trials == 0 {
        return 0.0;
    }
    let hits: usize = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut node = rng.random_range(0..adj.len());
            for _ in 1..path_len {
                let next = &adj[node];
                if next.is_empty() {
                    return 1;
                }
                node = next[rng.random_range(0..next.len())];
            }
            0
        })
        .sum();
    hits as f64 / trials as f64
}

/// Convenience for edges-only graphs.
pub fn dead_end_rate_for_edges(n: usize, edges: &[Edge], path_len: usize, trials: usize, seed: u64) -> f64 {
    dead_end_rate(&adjacency(n, edges), path_len, trials, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strongly_connected_has_no_dead_ends() {
        let adj: Vec<Vec<usize>> = (0..6).map(|i| vec![(i + 1) % 6, (i + 3) % 6]).collect();
        for len in [1, 2, 10, 100] {
            assert_eq!(dead_end_rate(&adj, len, 500, 1), 0.0);
        }
        assert!(bridge_components(&adj, |_, _| Ok(1.0)).unwrap().is_empty());
    }

    #[test]
    fn chain_always_dead_ends() {
        let adj = vec![vec![1], vec![2], vec![3], vec![4], vec![]];
        assert_eq!(dead_end_rate(&adj, 10, 1000, 9), 1.0);
        assert_eq!(dead_end_rate(&adj, 1, 1000, 9), 0.0);
    }

    #[test]
    fn two_three_cycles_get_one_pair() {
        let adj = vec![vec![1], vec![2], vec![0], vec![4], vec![5], vec![3]];
        let pos: [f64; 6] = [0.0, 1.0, 2.0, 10.0, 2.5, 11.0];
        let bridges = bridge_components(&adj, |u, v| Ok((pos[u] - pos[v]).abs())).unwrap();
        assert_eq!(bridges, vec![Bridge { u: 2, v: 4, distance: 0.5 }]);
    }

    #[test]
    fn ties_take_lowest_pair() {
        let adj = vec![vec![1], vec![0], vec![3], vec![2]];
        let bridges = bridge_components(&adj, |_, _| Ok(1.0)).unwrap();
        assert_eq!((bridges[0].u, bridges[0].v), (0, 2));
    }
}
