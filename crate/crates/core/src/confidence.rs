//! Vertex confidence: supervised targets, unsupervised density baselines,
//! and the GCN-V regressor that learns to predict confidence from structure.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::engine::{mse_gradient, mse_loss, GcnModel, LossReduction, TrainConfig};
use crate::error::{rejected, Error, Result};
use crate::graph::KnnGraph;
use crate::tensor::{dot, DenseMatrix, SparseAdjacency};

/// Dense, non-negative class labels; one per vertex.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelVector {
    labels: Vec<usize>,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>) -> Self {
        Self { labels }
    }

    /// Remaps arbitrary ids to `0..num_classes` in order of first appearance.
    pub fn remapped<I: IntoIterator<Item = u64>>(raw: I) -> Self {
        let mut ids: HashMap<u64, usize> = HashMap::new();
        let labels = raw
            .into_iter()
            .map(|r| {
                let next = ids.len();
                *ids.entry(r).or_insert(next)
            })
            .collect();
        Self { labels }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn num_classes(&self) -> usize {
        let mut seen: Vec<usize> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfidenceSource {
    GroundTruth,
    Predicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceVector {
    pub values: Vec<f64>,
    pub source: ConfidenceSource,
}

impl ConfidenceVector {
    pub fn predicted(values: Vec<f64>) -> Self {
        Self {
            values,
            source: ConfidenceSource::Predicted,
        }
    }

    pub fn ground_truth(values: Vec<f64>) -> Self {
        Self {
            values,
            source: ConfidenceSource::GroundTruth,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Whether vertex `a` ranks above vertex `b`: higher confidence, with
    /// exact ties going to the lower vertex id. This is a strict total order,
    /// so links that always point up it can never form a cycle.
    #[inline]
    pub fn outranks(&self, a: usize, b: usize) -> bool {
        let (ca, cb) = (self.values[a], self.values[b]);
        ca > cb || (ca == cb && a < b)
    }
}

/// Which definition of vertex confidence to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfidenceKind {
    /// Number of vertices within a cosine-distance radius (unsupervised).
    UNum,
    /// Sum of affinities to vertices within a radius (unsupervised).
    UWeight,
    /// Mean similarity to all other vertices of the same class.
    SAvg,
    /// Similarity to the class mean feature.
    SCenter,
    /// Signed, affinity-weighted neighborhood purity.
    SNbr,
    /// `SNbr` targets, with the graph rebuilt from learned embeddings before partitioning.
    SNbrF,
}

impl ConfidenceKind {
    pub fn is_supervised(self) -> bool {
        !matches!(self, ConfidenceKind::UNum | ConfidenceKind::UWeight)
    }
}

impl fmt::Display for ConfidenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfidenceKind::UNum => "u_num",
            ConfidenceKind::UWeight => "u_weight",
            ConfidenceKind::SAvg => "s_avg",
            ConfidenceKind::SCenter => "s_center",
            ConfidenceKind::SNbr => "s_nbr",
            ConfidenceKind::SNbrF => "s_nbr_f",
        })
    }
}

impl FromStr for ConfidenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "u_num" => ConfidenceKind::UNum,
            "u_weight" => ConfidenceKind::UWeight,
            "s_avg" => ConfidenceKind::SAvg,
            "s_center" => ConfidenceKind::SCenter,
            "s_nbr" => ConfidenceKind::SNbr,
            "s_nbr_f" => ConfidenceKind::SNbrF,
            other => return Err(rejected(format!("unknown confidence kind `{other}`"))),
        })
    }
}

/// `c_i = (1/|N_i|) Σ_{j∈N_i} (±1)·a_ij`, +1 for same-label neighbors.
///
/// `N_i` is the directed KNN list and `a_ij` the raw cosine affinity.
/// Vertices without neighbors get 0.
pub fn ground_truth_confidence(g: &KnnGraph, labels: &LabelVector) -> Result<ConfidenceVector> {
    if labels.len() != g.n() {
        return Err(rejected(format!(
            "{} labels for a graph of {} vertices",
            labels.len(),
            g.n()
        )));
    }
    let values = (0..g.n())
        .into_par_iter()
        .map(|i| {
            let nbrs = g.neighbors(i);
            if nbrs.is_empty() {
                return 0.0;
            }
            let yi = labels.get(i);
            let mut sum = 0.0;
            for nb in nbrs {
                let a = f64::from(nb.affinity);
                if labels.get(nb.id) == yi {
                    sum += a;
                } else {
                    sum -= a;
                }
            }
            sum / nbrs.len() as f64
        })
        .collect();
    Ok(ConfidenceVector::ground_truth(values))
}

/// Computes any of the confidence definitions. `radius` is needed by the
/// unsupervised kinds, `labels` by the supervised ones.
pub fn confidence_variant(
    g: &KnnGraph,
    labels: Option<&LabelVector>,
    features: &DenseMatrix,
    kind: ConfidenceKind,
    radius: Option<f64>,
) -> Result<ConfidenceVector> {
    if features.rows() != g.n() {
        return Err(rejected(format!(
            "{} feature rows for a graph of {} vertices",
            features.rows(),
            g.n()
        )));
    }
    if kind.is_supervised() {
        let labels = labels.ok_or_else(|| rejected(format!("confidence kind {kind} needs labels")))?;
        if labels.len() != g.n() {
            return Err(rejected("label count does not match vertex count"));
        }
        return match kind {
            ConfidenceKind::SNbr | ConfidenceKind::SNbrF => ground_truth_confidence(g, labels),
            ConfidenceKind::SAvg => Ok(ConfidenceVector::ground_truth(class_average_similarity(features, labels))),
            ConfidenceKind::SCenter => Ok(ConfidenceVector::ground_truth(class_center_similarity(features, labels))),
            _ => unreachable!(),
        };
    }
    let radius = radius.ok_or_else(|| rejected(format!("confidence kind {kind} needs a radius")))?;
    if radius.is_nan() || radius < 0.0 {
        return Err(rejected(format!("radius must be non-negative, got {radius}")));
    }
    let unit = features.l2_normalize_rows();
    let n = unit.rows();
    let values = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut count, mut weight) = (0.0, 0.0);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let s = dot(unit.row(i), unit.row(j));
                if 1.0 - s <= radius {
                    count += 1.0;
                    weight += s;
                }
            }
            if kind == ConfidenceKind::UNum {
                count
            } else {
                weight
            }
        })
        .collect();
    Ok(ConfidenceVector::predicted(values))
}

fn class_members(labels: &LabelVector) -> HashMap<usize, Vec<usize>> {
    let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &y) in labels.as_slice().iter().enumerate() {
        members.entry(y).or_default().push(i);
    }
    members
}

/// Singleton classes get 0.
fn class_average_similarity(features: &DenseMatrix, labels: &LabelVector) -> Vec<f64> {
    let unit = features.l2_normalize_rows();
    let members = class_members(labels);
    (0..unit.rows())
        .into_par_iter()
        .map(|i| {
            let class = &members[&labels.get(i)];
            if class.len() < 2 {
                return 0.0;
            }
            let sum: f64 = class
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| dot(unit.row(i), unit.row(j)))
                .sum();
            sum / (class.len() - 1) as f64
        })
        .collect()
}

/// Cosine between each vertex and the mean of its class's raw features.
/// Singleton classes get 1.
fn class_center_similarity(features: &DenseMatrix, labels: &LabelVector) -> Vec<f64> {
    let d = features.cols();
    let members = class_members(labels);
    let centers: HashMap<usize, Vec<f64>> = members
        .iter()
        .map(|(&y, ids)| {
            let mut c = vec![0.0; d];
            for &j in ids {
                for (a, b) in c.iter_mut().zip(features.row(j)) {
                    *a += b;
                }
            }
            c.iter_mut().for_each(|v| *v /= ids.len() as f64);
            (y, c)
        })
        .collect();
    (0..features.rows())
        .map(|i| {
            let y = labels.get(i);
            if members[&y].len() == 1 {
                return 1.0;
            }
            let f = features.row(i);
            let c = &centers[&y];
            let denom = dot(f, f).sqrt() * dot(c, c).sqrt();
            if denom > 0.0 {
                (dot(f, c) / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Full-batch GCN-V training on mean squared error.
/// Returns the trained model and the loss measured at the start of each epoch.
pub fn train_gcnv(
    mut model: GcnModel,
    adj_norm: &SparseAdjacency,
    features: &DenseMatrix,
    targets: &ConfidenceVector,
    cfg: &TrainConfig,
) -> Result<(GcnModel, Vec<f64>)> {
    cfg.validate()?;
    if targets.source != ConfidenceSource::GroundTruth {
        return Err(rejected("GCN-V trains on ground-truth confidence"));
    }
    if targets.len() != features.rows() {
        return Err(rejected(format!(
            "{} targets for {} vertices",
            targets.len(),
            features.rows()
        )));
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let pass = model.forward(adj_norm, features)?;
        let loss = mse_loss(&pass.predictions, &targets.values, LossReduction::Mean)?;
        if !loss.is_finite() {
            return Err(Error::Validation(format!("GCN-V loss diverged at epoch {epoch}")));
        }
        history.push(loss);
        let grad = mse_gradient(&pass.predictions, &targets.values, LossReduction::Mean)?;
        let grads = model.backward(adj_norm, &pass, &grad)?;
        model.sgd_step(&grads, cfg)?;
    }
    Ok((model, history))
}

/// Predicted confidence for every vertex plus the final-layer embeddings.
pub fn predict_confidence(
    model: &GcnModel,
    adj_norm: &SparseAdjacency,
    features: &DenseMatrix,
) -> Result<(ConfidenceVector, DenseMatrix)> {
    let (values, embeddings) = model.predict(adj_norm, features)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("predicted confidence is not finite".into()));
    }
    Ok((ConfidenceVector::predicted(values), embeddings))
}
