//! Exact KNN affinity graphs over cosine similarity.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{rejected, Error, Result};
use crate::tensor::{dot, DenseMatrix, SparseAdjacency};

/// One directed KNN edge. Affinities are cosine similarities rounded to `f32`,
/// which is also their on-disk precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub affinity: f32,
}

/// Directed KNN lists plus the symmetric (union) affinity matrix built from them.
///
/// The adjacency stores `max(affinity, 0)`: negative cosine edges keep their
/// structural entry but carry no weight.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    k: usize,
    neighbors: Vec<Vec<Neighbor>>,
    adjacency: SparseAdjacency,
}

/// Descending affinity, then ascending id.
fn rank_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.affinity
        .partial_cmp(&a.affinity)
        .unwrap_or(Ordering::Equal)
        .then(a.id.cmp(&b.id))
}

impl KnnGraph {
    /// Assembles a graph from directed neighbor lists. Lists are re-sorted by
    /// descending affinity (ties to the lower id).
    pub fn from_neighbor_lists(k: usize, mut neighbors: Vec<Vec<Neighbor>>) -> Result<Self> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter_mut().enumerate() {
            if list.len() > k {
                return Err(Error::Validation(format!(
                    "vertex {i} has {} neighbors, more than k={k}",
                    list.len()
                )));
            }
            for nb in list.iter() {
                if nb.id >= n {
                    return Err(Error::Validation(format!("vertex {i}: neighbor {} out of range", nb.id)));
                }
                if nb.id == i {
                    return Err(Error::Validation(format!("vertex {i} lists itself")));
                }
                if !nb.affinity.is_finite() || !(-1.0..=1.0).contains(&nb.affinity) {
                    return Err(Error::Validation(format!(
                        "vertex {i}: affinity {} outside [-1, 1]",
                        nb.affinity
                    )));
                }
            }
            list.sort_by(rank_order);
            let mut ids: Vec<usize> = list.iter().map(|nb| nb.id).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Validation(format!("vertex {i} lists a neighbor twice")));
            }
        }
        let adjacency = symmetric_union(&neighbors)?;
        Ok(Self {
            k,
            neighbors,
            adjacency,
        })
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Directed neighbor list of `i`, descending by affinity.
    pub fn neighbors(&self, i: usize) -> &[Neighbor] {
        &self.neighbors[i]
    }

    pub fn neighbor_lists(&self) -> &[Vec<Neighbor>] {
        &self.neighbors
    }

    pub fn adjacency(&self) -> &SparseAdjacency {
        &self.adjacency
    }

    /// `D̃⁻¹(A + I)` with `D̃` the row sums of `A + I`.
    pub fn normalized_adjacency(&self) -> SparseAdjacency {
        self.adjacency.normalized_with_self_loops()
    }
}

fn symmetric_union(neighbors: &[Vec<Neighbor>]) -> Result<SparseAdjacency> {
    let n = neighbors.len();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, list) in neighbors.iter().enumerate() {
        for nb in list {
            let w = f64::from(nb.affinity).max(0.0);
            rows[i].push((nb.id, w));
            rows[nb.id].push((i, w));
        }
    }
    for r in rows.iter_mut() {
        r.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
        // keeps the larger value of a reciprocal pair
        r.dedup_by_key(|e| e.0);
    }
    SparseAdjacency::from_rows(rows, true)
}

/// Exact top-`k` cosine neighbors of every row of `features`.
pub fn build_knn_graph(features: &DenseMatrix, k: usize) -> Result<KnnGraph> {
    if k == 0 {
        return Err(rejected("k must be at least 1"));
    }
    let n = features.rows();
    if n < 2 {
        return Err(rejected(format!("need at least 2 vertices, got {n}")));
    }
    let unit = features.l2_normalize_rows();
    let k_eff = k.min(n - 1);
    let neighbors: Vec<Vec<Neighbor>> = (0..n)
        .into_par_iter()
        .map(|i| top_k_row(&unit, i, k_eff))
        .collect();
    KnnGraph::from_neighbor_lists(k, neighbors)
}

fn top_k_row(unit: &DenseMatrix, i: usize, k: usize) -> Vec<Neighbor> {
    let q = unit.row(i);
    let mut sims: Vec<(f64, usize)> = (0..unit.rows())
        .filter(|&j| j != i)
        .map(|j| (dot(q, unit.row(j)), j))
        .collect();
    let by_rank = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < sims.len() {
        sims.select_nth_unstable_by(k - 1, by_rank);
        sims.truncate(k);
    }
    let mut out: Vec<Neighbor> = sims
        .into_iter()
        .map(|(s, id)| Neighbor {
            id,
            affinity: (s as f32).clamp(-1.0, 1.0),
        })
        .collect();
    out.sort_by(rank_order);
    out
}

/// Normalized adjacency of `g`; see [`KnnGraph::normalized_adjacency`].
pub fn normalized_adjacency(g: &KnnGraph) -> SparseAdjacency {
    g.normalized_adjacency()
}

/// Rebuilds the KNN graph from learned embeddings (e.g. the last GCN layer).
pub fn rebuild_graph(embeddings: &DenseMatrix, k: usize) -> Result<KnnGraph> {
    build_knn_graph(embeddings, k)
}
