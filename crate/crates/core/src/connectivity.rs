//! GCN-E: connectivity between a vertex and the members of its candidate set.
//!
//! The candidate set of `i` holds the KNN neighbors that outrank `i` in
//! confidence. Each set becomes a small graph whose features are offsets from
//! `f_i`; the GCN regresses, per member, whether it shares `i`'s class.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::confidence::{ConfidenceVector, LabelVector};
use crate::engine::{mse_gradient, mse_loss, Gradients, GcnModel, LossReduction, TrainConfig};
use crate::error::{rejected, Error, Result};
use crate::graph::KnnGraph;
use crate::tensor::{DenseMatrix, SparseAdjacency};

/// Subgraphs per optimizer step when training GCN-E.
pub const GCNE_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub center: usize,
    /// Neighbors of `center` that outrank it, by descending affinity.
    pub members: Vec<usize>,
    pub affinities: Vec<f32>,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }
}

/// The candidate subgraph of one center vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub center: usize,
    pub vertex_ids: Vec<usize>,
    /// `f_j − f_center` for each member `j`.
    pub features_offset: DenseMatrix,
    /// Induced affinities among members, self-loop normalized.
    pub adjacency: SparseAdjacency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityPrediction {
    pub center: usize,
    pub members: Vec<usize>,
    pub scores: Vec<f64>,
}

impl ConnectivityPrediction {
    pub fn score_of(&self, member: usize) -> Option<f64> {
        self.members
            .iter()
            .position(|&m| m == member)
            .map(|p| self.scores[p])
    }
}

pub fn candidate_set(i: usize, g: &KnnGraph, conf: &ConfidenceVector) -> Result<CandidateSet> {
    if conf.len() != g.n() {
        return Err(rejected(format!(
            "{} confidences for a graph of {} vertices",
            conf.len(),
            g.n()
        )));
    }
    if i >= g.n() {
        return Err(rejected(format!("vertex {i} out of range")));
    }
    let (members, affinities) = g
        .neighbors(i)
        .iter()
        .filter(|nb| conf.outranks(nb.id, i))
        .map(|nb| (nb.id, nb.affinity))
        .unzip();
    Ok(CandidateSet {
        center: i,
        members,
        affinities,
    })
}

pub fn build_subgraph(s: &CandidateSet, g: &KnnGraph, features: &DenseMatrix) -> Result<Subgraph> {
    if s.is_empty() {
        return Err(rejected(format!("candidate set of vertex {} is empty", s.center)));
    }
    if features.rows() != g.n() {
        return Err(rejected("feature rows do not match graph size"));
    }
    let center = features.row(s.center);
    let d = features.cols();
    let mut offsets = Vec::with_capacity(s.len() * d);
    for &j in &s.members {
        offsets.extend(features.row(j).iter().zip(center).map(|(a, b)| a - b));
    }
    let global = g.adjacency();
    let rows = s
        .members
        .iter()
        .map(|&a| {
            s.members
                .iter()
                .enumerate()
                .filter_map(|(lb, &b)| global.get(a, b).map(|v| (lb, v)))
                .collect()
        })
        .collect();
    let induced = SparseAdjacency::from_rows(rows, true)?;
    Ok(Subgraph {
        center: s.center,
        vertex_ids: s.members.clone(),
        features_offset: DenseMatrix::from_raw(s.len(), d, offsets),
        adjacency: induced.normalized_with_self_loops(),
    })
}

/// 1 for members sharing the center's label, else 0.
pub fn ground_truth_connectivity(s: &CandidateSet, labels: &LabelVector) -> Result<Vec<f64>> {
    let yi = *labels
        .as_slice()
        .get(s.center)
        .ok_or_else(|| rejected("labels do not cover the center vertex"))?;
    s.members
        .iter()
        .map(|&j| match labels.as_slice().get(j) {
            Some(&yj) => Ok(if yj == yi { 1.0 } else { 0.0 }),
            None => Err(rejected(format!("labels do not cover member {j}"))),
        })
        .collect()
}

/// One `(subgraph, targets)` sample per vertex with a nonempty candidate set.
pub fn training_set(
    g: &KnnGraph,
    features: &DenseMatrix,
    labels: &LabelVector,
    conf: &ConfidenceVector,
) -> Result<Vec<(Subgraph, Vec<f64>)>> {
    (0..g.n())
        .into_par_iter()
        .map(|i| {
            let s = candidate_set(i, g, conf)?;
            if s.is_empty() {
                return Ok(None);
            }
            let targets = ground_truth_connectivity(&s, labels)?;
            Ok(Some((build_subgraph(&s, g, features)?, targets)))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}

fn subgraph_gradients(model: &GcnModel, sub: &Subgraph, targets: &[f64]) -> Result<(f64, Gradients)> {
    let pass = model.forward(&sub.adjacency, &sub.features_offset)?;
    let loss = mse_loss(&pass.predictions, targets, LossReduction::Sum)?;
    let grad = mse_gradient(&pass.predictions, targets, LossReduction::Sum)?;
    Ok((loss, model.backward(&sub.adjacency, &pass, &grad)?))
}

/// Mini-batch GCN-E training: per-subgraph summed MSE, averaged over each
/// batch of [`GCNE_BATCH_SIZE`] subgraphs. The visiting order is reshuffled
/// every epoch from `cfg.seed`. Returns the mean per-subgraph loss of each epoch.
pub fn train_gcne(
    mut model: GcnModel,
    dataset: &[(Subgraph, Vec<f64>)],
    cfg: &TrainConfig,
) -> Result<(GcnModel, Vec<f64>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(rejected("GCN-E training set is empty"));
    }
    if let Some((s, _)) = dataset.iter().find(|(s, t)| s.vertex_ids.is_empty() || t.len() != s.vertex_ids.len()) {
        return Err(rejected(format!(
            "subgraph of vertex {} is empty or has mismatched targets",
            s.center
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(GCNE_BATCH_SIZE) {
            let parts = batch
                .par_iter()
                .map(|&idx| subgraph_gradients(&model, &dataset[idx].0, &dataset[idx].1))
                .collect::<Result<Vec<_>>>()?;
            let mut total = Gradients::zeros_like(&model);
            for (loss, g) in &parts {
                epoch_loss += loss;
                total.add_assign(g);
            }
            total.scale(1.0 / batch.len() as f64);
            model.sgd_step(&total, cfg)?;
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Validation(format!("GCN-E loss diverged at epoch {epoch}")));
        }
        history.push(mean);
    }
    Ok((model, history))
}

pub fn predict_connectivity(
    model: &GcnModel,
    s: &CandidateSet,
    g: &KnnGraph,
    features: &DenseMatrix,
) -> Result<ConnectivityPrediction> {
    let sub = build_subgraph(s, g, features)?;
    let (scores, _) = model.predict(&sub.adjacency, &sub.features_offset)?;
    Ok(ConnectivityPrediction {
        center: s.center,
        members: sub.vertex_ids,
        scores,
    })
}

/// Runs GCN-E for every listed vertex that has a nonempty candidate set.
pub fn predict_for_vertices(
    model: &GcnModel,
    vertices: &[usize],
    g: &KnnGraph,
    features: &DenseMatrix,
    conf: &ConfidenceVector,
) -> Result<Vec<ConnectivityPrediction>> {
    vertices
        .par_iter()
        .map(|&i| {
            let s = candidate_set(i, g, conf)?;
            if s.is_empty() {
                Ok(None)
            } else {
                predict_connectivity(model, &s, g, features).map(Some)
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}

/// The `⌈rho·n⌉` most confident vertices, most confident first
/// (equal confidence goes to the lower id).
pub fn select_top_rho(conf: &ConfidenceVector, rho: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(rejected(format!("rho must be in [0, 1], got {rho}")));
    }
    let n = conf.len();
    // the epsilon keeps e.g. 0.2·10000 from rounding up to 2001
    let count = ((rho * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.sort_by(|&a, &b| {
        conf.values[b]
            .total_cmp(&conf.values[a])
            .then(a.cmp(&b))
    });
    ids.truncate(count);
    Ok(ids)
}

/// `center_id member_id score` lines.
pub fn format_predictions(preds: &[ConnectivityPrediction]) -> String {
    let mut out = String::new();
    for p in preds {
        for (m, s) in p.members.iter().zip(&p.scores) {
            let _ = writeln!(out, "{} {} {}", p.center, m, s);
        }
    }
    out
}
