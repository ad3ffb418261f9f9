//! Confidence-ordered linking and connected-component extraction.

use rayon::prelude::*;

use crate::confidence::ConfidenceVector;
use crate::connectivity::ConnectivityPrediction;
use crate::error::{rejected, Result};
use crate::graph::KnnGraph;

/// Outgoing links of one vertex, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkChoice {
    pub source: usize,
    pub targets: Vec<usize>,
    /// The ranking score of each target: predicted connectivity or affinity.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    num_clusters: usize,
}

impl ClusterAssignment {
    /// Renumbers arbitrary labels to `0..num_clusters` in order of first
    /// appearance, i.e. by each cluster's smallest vertex id.
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|&r| {
                let next = map.len();
                *map.entry(r).or_insert(next)
            })
            .collect();
        Self {
            labels,
            num_clusters: map.len(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Picks up to `m` link targets per vertex among the neighbors that outrank it
/// and whose affinity is at least `tau`.
///
/// Vertices listed in `rho_set` that have a prediction are ranked by predicted
/// connectivity; every other vertex ranks by raw affinity. Ties go to the
/// lower vertex id. Vertices left with no candidates emit nothing.
pub fn choose_links(
    g: &KnnGraph,
    conf: &ConfidenceVector,
    preds: Option<&[ConnectivityPrediction]>,
    rho_set: &[usize],
    m: usize,
    tau: f64,
) -> Result<Vec<LinkChoice>> {
    if m == 0 {
        return Err(rejected("m must be at least 1"));
    }
    if !(-1.0..=1.0).contains(&tau) {
        return Err(rejected(format!("tau must be in [-1, 1], got {tau}")));
    }
    let n = g.n();
    if conf.len() != n {
        return Err(rejected(format!("{} confidences for {n} vertices", conf.len())));
    }
    let mut in_rho = vec![false; n];
    for &v in rho_set {
        *in_rho
            .get_mut(v)
            .ok_or_else(|| rejected(format!("rho-set vertex {v} out of range")))? = true;
    }
    let mut pred_of: Vec<Option<&ConnectivityPrediction>> = vec![None; n];
    for p in preds.unwrap_or_default() {
        if p.center >= n || p.members.len() != p.scores.len() {
            return Err(rejected(format!("malformed prediction for center {}", p.center)));
        }
        pred_of[p.center] = Some(p);
    }

    let choices = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Option<LinkChoice>> {
            let mut ranked: Vec<(usize, f64)> = g
                .neighbors(i)
                .iter()
                .filter(|nb| conf.outranks(nb.id, i) && f64::from(nb.affinity) >= tau)
                .map(|nb| (nb.id, f64::from(nb.affinity)))
                .collect();
            if ranked.is_empty() {
                return Ok(None);
            }
            if let (true, Some(p)) = (in_rho[i], pred_of[i]) {
                for (id, score) in ranked.iter_mut() {
                    *score = p.score_of(*id).ok_or_else(|| {
                        rejected(format!("prediction for vertex {i} lacks candidate {id}"))
                    })?;
                }
            }
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked.truncate(m);
            let (targets, scores) = ranked.into_iter().unzip();
            Ok(Some(LinkChoice {
                source: i,
                targets,
                scores,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(choices.into_iter().flatten().collect())
}

/// Disjoint sets with path halving and union by size.
struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Weakly connected components of the link graph; cluster ids follow each
/// component's smallest vertex id.
pub fn extract_clusters(links: &[LinkChoice], n: usize) -> Result<ClusterAssignment> {
    let mut uf = UnionFind::new(n);
    for link in links {
        if link.source >= n {
            return Err(rejected(format!("link source {} out of range", link.source)));
        }
        for &t in &link.targets {
            if t >= n {
                return Err(rejected(format!("link target {t} out of range")));
            }
            uf.union(link.source, t);
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    Ok(ClusterAssignment::from_labels(&roots))
}

/// One label per line, line `i` holding the cluster of vertex `i`.
pub fn format_clusters(c: &ClusterAssignment) -> String {
    let mut out = String::with_capacity(c.len() * 4);
    for l in c.labels() {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_knn_graph, Neighbor};
    use crate::tensor::DenseMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_case(n: usize, k: usize, seed: u64) -> (KnnGraph, ConfidenceVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..n * 4).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f = DenseMatrix::new(n, 4, f).unwrap();
        let conf = ConfidenceVector::predicted((0..n).map(|_| rng.random_range(0.0..1.0)).collect());
        (build_knn_graph(&f, k).unwrap(), conf)
    }

    fn has_cycle(links: &[LinkChoice], n: usize) -> bool {
        let mut adj = vec![Vec::new(); n];
        for l in links {
            adj[l.source].extend(&l.targets);
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; n];
        fn visit(v: usize, adj: &[Vec<usize>], state: &mut [u8]) -> bool {
            state[v] = 1;
            for &w in &adj[v] {
                if state[w] == 1 || (state[w] == 0 && visit(w, adj, state)) {
                    return true;
                }
            }
            state[v] = 2;
            false
        }
        (0..n).any(|v| state[v] == 0 && visit(v, &adj, &mut state))
    }

    #[test]
    fn most_confident_vertex_is_root() {
        let (g, conf) = random_case(30, 5, 1);
        let top = (0..30).max_by(|&a, &b| conf.values[a].total_cmp(&conf.values[b])).unwrap();
        let links = choose_links(&g, &conf, None, &[], 1, -1.0).unwrap();
        assert!(links.iter().all(|l| l.source != top));
    }

    #[test]
    fn tau_above_all_affinities_gives_singletons() {
        let (g, conf) = random_case(30, 5, 2);
        let links = choose_links(&g, &conf, None, &[], 2, 1.0).unwrap();
        assert!(links.is_empty());
        let c = extract_clusters(&links, 30).unwrap();
        assert_eq!(c.num_clusters(), 30);
    }

    #[test]
    fn m1_links_follow_filter_then_argmax() {
        let (g, conf) = random_case(50, 6, 3);
        let links = choose_links(&g, &conf, None, &[], 1, 0.0).unwrap();
        for i in 0..50 {
            let mut best: Option<(usize, f32)> = None;
            for nb in g.neighbors(i) {
                if conf.values[nb.id] > conf.values[i] && nb.affinity >= 0.0 {
                    match best {
                        Some((id, a)) if a > nb.affinity || (a == nb.affinity && id < nb.id) => {}
                        _ => best = Some((nb.id, nb.affinity)),
                    }
                }
            }
            let got = links.iter().find(|l| l.source == i).map(|l| l.targets[0]);
            assert_eq!(got, best.map(|b| b.0), "vertex {i}");
        }
    }

    #[test]
    fn predictions_override_affinity_ranking() {
        let lists = vec![
            vec![Neighbor { id: 1, affinity: 0.9 }, Neighbor { id: 2, affinity: 0.85 }],
            vec![],
            vec![],
        ];
        let g = KnnGraph::from_neighbor_lists(2, lists).unwrap();
        let conf = ConfidenceVector::predicted(vec![0.0, 1.0, 1.0]);
        let pred = ConnectivityPrediction { center: 0, members: vec![1, 2], scores: vec![0.1, 0.8] };
        let by_aff = choose_links(&g, &conf, Some(std::slice::from_ref(&pred)), &[], 1, 0.5).unwrap();
        assert_eq!(by_aff[0].targets, vec![1]);
        let by_pred = choose_links(&g, &conf, Some(std::slice::from_ref(&pred)), &[0], 1, 0.5).unwrap();
        assert_eq!(by_pred[0].targets, vec![2]);
        // tau still filters on affinity
        let cut = choose_links(&g, &conf, Some(std::slice::from_ref(&pred)), &[0], 1, 0.88).unwrap();
        assert_eq!(cut[0].targets, vec![1]);
    }

    #[test]
    fn rejects_bad_parameters() {
        let (g, conf) = random_case(10, 3, 4);
        assert!(choose_links(&g, &conf, None, &[], 0, 0.5).is_err());
        assert!(choose_links(&g, &conf, None, &[], 1, 1.5).is_err());
        assert!(choose_links(&g, &conf, None, &[10], 1, 0.5).is_err());
        let bad = LinkChoice { source: 0, targets: vec![10], scores: vec![1.0] };
        assert!(extract_clusters(&[bad], 10).is_err());
    }

    #[test]
    fn extract_cases() {
        assert_eq!(extract_clusters(&[], 4).unwrap().labels(), &[0, 1, 2, 3]);
        let chain = vec![
            LinkChoice { source: 0, targets: vec![1], scores: vec![1.0] },
            LinkChoice { source: 1, targets: vec![2], scores: vec![1.0] },
        ];
        let c = extract_clusters(&chain, 4).unwrap();
        assert_eq!(c.labels(), &[0, 0, 0, 1]);
        assert_eq!(c.num_clusters(), 2);
        let later = vec![LinkChoice { source: 3, targets: vec![1], scores: vec![1.0] }];
        assert_eq!(extract_clusters(&later, 4).unwrap().labels(), &[0, 1, 2, 1]);
    }

    #[test]
    fn forest_component_count_equals_roots() {
        for seed in 0..20 {
            let (g, conf) = random_case(100, 5, seed);
            let links = choose_links(&g, &conf, None, &[], 1, 0.0).unwrap();
            let roots = 100 - links.len();
            assert_eq!(extract_clusters(&links, 100).unwrap().num_clusters(), roots);
        }
    }

    #[test]
    fn plateau_breaks_ties_by_lower_id() {
        let f = DenseMatrix::from_rows(&vec![vec![1.0, 0.0]; 5]).unwrap();
        let g = build_knn_graph(&f, 4).unwrap();
        let conf = ConfidenceVector::predicted(vec![0.5; 5]);
        let links = choose_links(&g, &conf, None, &[], 1, 0.8).unwrap();
        assert_eq!(links.len(), 4);
        assert_eq!(extract_clusters(&links, 5).unwrap().num_clusters(), 1);
    }

    #[test]
    fn cluster_file_format() {
        let c = ClusterAssignment::from_labels(&[7, 7, 3]);
        assert_eq!(format_clusters(&c), "0\n0\n1\n");
    }

    proptest! {
        #[test]
        fn links_are_acyclic_and_bounded(seed in any::<u64>(), m in 1usize..4, tau in -1.0f64..1.0) {
            let (g, conf) = random_case(40, 6, seed);
            let links = choose_links(&g, &conf, None, &[], m, tau).unwrap();
            prop_assert!(links.iter().all(|l| l.targets.len() <= m));
            prop_assert!(links.iter().all(|l| l.targets.iter().all(|&t| conf.outranks(t, l.source))));
            prop_assert!(!has_cycle(&links, 40));
        }

        #[test]
        fn raising_tau_never_merges(seed in any::<u64>(), lo in -1.0f64..1.0, delta in 0.0f64..0.5) {
            let (g, conf) = random_case(40, 6, seed);
            let hi = (lo + delta).min(1.0);
            let a = extract_clusters(&choose_links(&g, &conf, None, &[], 1, lo).unwrap(), 40).unwrap();
            let b = extract_clusters(&choose_links(&g, &conf, None, &[], 1, hi).unwrap(), 40).unwrap();
            prop_assert!(b.num_clusters() >= a.num_clusters());
        }
    }
}
