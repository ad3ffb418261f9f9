//! End-to-end orchestration: graph → GCN-V → (GCN-E) → partition → scores.

use std::fmt::Write as _;

use crate::confidence::{
    confidence_variant, ground_truth_confidence, predict_confidence, train_gcnv, ConfidenceKind,
    ConfidenceVector, LabelVector,
};
use crate::connectivity::{predict_for_vertices, select_top_rho, train_gcne, training_set, ConnectivityPrediction};
use crate::engine::{GcnModel, TrainConfig};
use crate::error::{rejected, Error, Result, Stage, StageExt};
use crate::graph::{build_knn_graph, rebuild_graph, KnnGraph};
use crate::metrics::{evaluate, ScoreReport};
use crate::partition::{choose_links, extract_clusters, ClusterAssignment};
use crate::tensor::DenseMatrix;

/// Every tunable of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub k: usize,
    pub tau: f64,
    pub rho: f64,
    pub m: usize,
    pub gcnv_layers: usize,
    pub gcne_layers: usize,
    /// Width of every hidden layer; `None` uses the input feature dimension.
    pub hidden_dim: Option<usize>,
    /// Optimizer settings; `epochs` is the GCN-V epoch count.
    pub train: TrainConfig,
    pub gcne_epochs: usize,
    pub confidence_kind: ConfidenceKind,
    /// Cosine-distance radius for the unsupervised confidence kinds.
    pub radius: Option<f64>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 80,
            tau: 0.8,
            rho: 0.2,
            m: 1,
            gcnv_layers: 1,
            gcne_layers: 4,
            hidden_dim: None,
            train: TrainConfig::default(),
            gcne_epochs: 80,
            confidence_kind: ConfidenceKind::SNbr,
            radius: None,
            seed: 0,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| rejected(format!("invalid value `{value}` for `{key}`")))
}

impl PipelineConfig {
    /// Sets one field by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "k" => self.k = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "rho" => self.rho = parse_value(key, value)?,
            "m" => self.m = parse_value(key, value)?,
            "gcnv_layers" => self.gcnv_layers = parse_value(key, value)?,
            "gcne_layers" => self.gcne_layers = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = Some(parse_value(key, value)?),
            "learning_rate" => self.train.learning_rate = parse_value(key, value)?,
            "momentum" => self.train.momentum = parse_value(key, value)?,
            "weight_decay" => self.train.weight_decay = parse_value(key, value)?,
            "gcnv_epochs" => self.train.epochs = parse_value(key, value)?,
            "gcne_epochs" => self.gcne_epochs = parse_value(key, value)?,
            "confidence_kind" => self.confidence_kind = value.parse()?,
            "radius" => self.radius = Some(parse_value(key, value)?),
            "seed" => self.seed = parse_value(key, value)?,
            other => return Err(rejected(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            cfg.set(key, value).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Inverse of [`PipelineConfig::parse`].
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "k = {}", self.k);
        let _ = writeln!(out, "tau = {}", self.tau);
        let _ = writeln!(out, "rho = {}", self.rho);
        let _ = writeln!(out, "m = {}", self.m);
        let _ = writeln!(out, "gcnv_layers = {}", self.gcnv_layers);
        let _ = writeln!(out, "gcne_layers = {}", self.gcne_layers);
        if let Some(h) = self.hidden_dim {
            let _ = writeln!(out, "hidden_dim = {h}");
        }
        let _ = writeln!(out, "learning_rate = {}", self.train.learning_rate);
        let _ = writeln!(out, "momentum = {}", self.train.momentum);
        let _ = writeln!(out, "weight_decay = {}", self.train.weight_decay);
        let _ = writeln!(out, "gcnv_epochs = {}", self.train.epochs);
        let _ = writeln!(out, "gcne_epochs = {}", self.gcne_epochs);
        let _ = writeln!(out, "confidence_kind = {}", self.confidence_kind);
        if let Some(r) = self.radius {
            let _ = writeln!(out, "radius = {r}");
        }
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(rejected("k must be at least 1"));
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(rejected(format!("tau must be in [-1, 1], got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(rejected(format!("rho must be in [0, 1], got {}", self.rho)));
        }
        if self.m == 0 {
            return Err(rejected("m must be at least 1"));
        }
        if self.gcnv_layers == 0 || self.gcne_layers == 0 {
            return Err(rejected("GCNs need at least one layer"));
        }
        if self.hidden_dim == Some(0) {
            return Err(rejected("hidden_dim must be at least 1"));
        }
        if self.gcne_epochs == 0 {
            return Err(rejected("gcne_epochs must be at least 1"));
        }
        if let Some(r) = self.radius {
            if !(r.is_finite() && r >= 0.0) {
                return Err(rejected(format!("radius must be finite and >= 0, got {r}")));
            }
        }
        if !self.confidence_kind.is_supervised() && self.radius.is_none() {
            return Err(rejected(format!(
                "confidence kind {} needs a radius",
                self.confidence_kind
            )));
        }
        self.train.validate()
    }

    fn hidden(&self, input_dim: usize, layers: usize) -> Vec<usize> {
        vec![self.hidden_dim.unwrap_or(input_dim); layers]
    }

    fn train_config(&self, stage: &str, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            seed: stage_seed(self.seed, stage),
            ..self.train.clone()
        }
    }
}

/// Named sub-seed: FNV-1a of the stage name mixed into the run seed, then a
/// splitmix64 finalizer.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Trained estimators plus their per-epoch loss curves.
#[derive(Debug, Clone)]
pub struct FittedModels {
    /// `None` for the unsupervised confidence kinds, which need no training.
    pub confidence: Option<GcnModel>,
    /// `None` when trained with `rho = 0`.
    pub connectivity: Option<GcnModel>,
    pub confidence_loss: Vec<f64>,
    pub connectivity_loss: Vec<f64>,
}

/// Confidence targets for the training graph under `cfg.confidence_kind`.
pub fn training_targets(
    cfg: &PipelineConfig,
    graph: &KnnGraph,
    features: &DenseMatrix,
    labels: &LabelVector,
) -> Result<ConfidenceVector> {
    confidence_variant(graph, Some(labels), features, cfg.confidence_kind, cfg.radius)
}

/// Trains GCN-V on the labeled graph, and GCN-E as well when `cfg.rho > 0`.
pub fn fit(cfg: &PipelineConfig, features: &DenseMatrix, labels: &LabelVector) -> Result<FittedModels> {
    cfg.validate()?;
    if labels.len() != features.rows() {
        return Err(rejected(format!(
            "{} training labels for {} training vertices",
            labels.len(),
            features.rows()
        )));
    }
    let graph = build_knn_graph(features, cfg.k).in_stage(Stage::BuildGraph)?;
    let d = features.cols();
    let targets = training_targets(cfg, &graph, features, labels).in_stage(Stage::TrainConfidence)?;

    let (confidence, confidence_loss) = if cfg.confidence_kind.is_supervised() {
        let tc = cfg.train_config("gcnv", cfg.train.epochs);
        let model = GcnModel::init(d, &cfg.hidden(d, cfg.gcnv_layers), stage_seed(cfg.seed, "gcnv-init"))
            .in_stage(Stage::TrainConfidence)?;
        let (m, loss) = train_gcnv(model, &graph.normalized_adjacency(), features, &targets, &tc)
            .in_stage(Stage::TrainConfidence)?;
        (Some(m), loss)
    } else {
        (None, Vec::new())
    };

    let (connectivity, connectivity_loss) = if cfg.rho > 0.0 {
        let (e_graph, e_conf) = match (&confidence, cfg.confidence_kind) {
            (Some(model), ConfidenceKind::SNbrF) => {
                let (_, emb) = predict_confidence(model, &graph.normalized_adjacency(), features)
                    .in_stage(Stage::RebuildGraph)?;
                let rebuilt = rebuild_graph(&emb, cfg.k).in_stage(Stage::RebuildGraph)?;
                let conf = ground_truth_confidence(&rebuilt, labels).in_stage(Stage::RebuildGraph)?;
                (rebuilt, conf)
            }
            _ => (graph, targets),
        };
        let dataset = training_set(&e_graph, features, labels, &e_conf).in_stage(Stage::TrainConnectivity)?;
        let model = GcnModel::init(d, &cfg.hidden(d, cfg.gcne_layers), stage_seed(cfg.seed, "gcne-init"))
            .in_stage(Stage::TrainConnectivity)?;
        let tc = cfg.train_config("gcne", cfg.gcne_epochs);
        let (m, loss) = train_gcne(model, &dataset, &tc).in_stage(Stage::TrainConnectivity)?;
        (Some(m), loss)
    } else {
        (None, Vec::new())
    };

    Ok(FittedModels {
        confidence,
        connectivity,
        confidence_loss,
        connectivity_loss,
    })
}

/// Everything the partition step needs for one unlabeled feature set.
#[derive(Debug, Clone)]
pub struct Inference {
    /// The KNN graph used for linking (rebuilt from embeddings for `s_nbr_f`).
    pub graph: KnnGraph,
    pub confidence: ConfidenceVector,
    /// Vertices whose links are ranked by GCN-E, most confident first.
    pub rho_set: Vec<usize>,
    pub predictions: Vec<ConnectivityPrediction>,
}

impl Inference {
    /// Narrows the GCN-E set to the top `rho` fraction. Only shrinks: vertices
    /// outside the original set have no predictions.
    pub fn with_rho(&self, rho: f64) -> Result<Inference> {
        let top = select_top_rho(&self.confidence, rho)?;
        if top.len() > self.rho_set.len() {
            return Err(rejected("cannot widen the GCN-E vertex set after inference"));
        }
        Ok(Inference {
            rho_set: top,
            ..self.clone()
        })
    }
}

/// Builds the test graph, predicts confidence, and runs GCN-E on the top-ρ vertices.
pub fn infer(cfg: &PipelineConfig, models: &FittedModels, features: &DenseMatrix) -> Result<Inference> {
    cfg.validate()?;
    let graph = build_knn_graph(features, cfg.k).in_stage(Stage::BuildGraph)?;
    let (graph, confidence) = if cfg.confidence_kind.is_supervised() {
        let model = models
            .confidence
            .as_ref()
            .ok_or_else(|| rejected("no trained confidence model"))
            .in_stage(Stage::PredictConfidence)?;
        let (conf, emb) =
            predict_confidence(model, &graph.normalized_adjacency(), features).in_stage(Stage::PredictConfidence)?;
        if cfg.confidence_kind == ConfidenceKind::SNbrF {
            (rebuild_graph(&emb, cfg.k).in_stage(Stage::RebuildGraph)?, conf)
        } else {
            (graph, conf)
        }
    } else {
        let conf = confidence_variant(&graph, None, features, cfg.confidence_kind, cfg.radius)
            .in_stage(Stage::PredictConfidence)?;
        (graph, conf)
    };

    let rho_set = select_top_rho(&confidence, cfg.rho).in_stage(Stage::PredictConnectivity)?;
    let predictions = match (&models.connectivity, rho_set.is_empty()) {
        (Some(model), false) => predict_for_vertices(model, &rho_set, &graph, features, &confidence)
            .in_stage(Stage::PredictConnectivity)?,
        (None, false) => {
            return Err(rejected("rho > 0 but no trained connectivity model"))
                .in_stage(Stage::PredictConnectivity)
        }
        _ => Vec::new(),
    };
    Ok(Inference {
        graph,
        confidence,
        rho_set,
        predictions,
    })
}

/// Links with `cfg.m` and `cfg.tau`, then extracts the components.
pub fn cluster(cfg: &PipelineConfig, inference: &Inference) -> Result<ClusterAssignment> {
    let links = choose_links(
        &inference.graph,
        &inference.confidence,
        Some(&inference.predictions),
        &inference.rho_set,
        cfg.m,
        cfg.tau,
    )
    .in_stage(Stage::Partition)?;
    extract_clusters(&links, inference.graph.n()).in_stage(Stage::Partition)
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub clusters: ClusterAssignment,
    /// Present when test labels were supplied.
    pub report: Option<ScoreReport>,
    pub models: FittedModels,
}

/// Train on the labeled set, cluster the test set, and score it if labels are given.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    train_features: &DenseMatrix,
    train_labels: &LabelVector,
    test_features: &DenseMatrix,
    test_labels: Option<&LabelVector>,
) -> Result<PipelineOutput> {
    if train_features.cols() != test_features.cols() {
        return Err(rejected(format!(
            "train features have {} dims, test features {}",
            train_features.cols(),
            test_features.cols()
        )));
    }
    let models = fit(cfg, train_features, train_labels)?;
    let inference = infer(cfg, &models, test_features)?;
    let clusters = cluster(cfg, &inference)?;
    let report = test_labels
        .map(|gt| evaluate(&clusters, gt).in_stage(Stage::Evaluate))
        .transpose()?;
    Ok(PipelineOutput {
        clusters,
        report,
        models,
    })
}

/// Outcome of a τ sweep on labeled data.
#[derive(Debug, Clone)]
pub struct TauSweep {
    pub best_tau: f64,
    pub scores: Vec<(f64, ScoreReport)>,
}

/// Scores every τ in `grid` on a labeled set and keeps the one with the best
/// pairwise F-score (the first on ties).
pub fn sweep_tau(
    cfg: &PipelineConfig,
    models: &FittedModels,
    features: &DenseMatrix,
    labels: &LabelVector,
    grid: &[f64],
) -> Result<TauSweep> {
    if grid.is_empty() {
        return Err(rejected("empty tau grid"));
    }
    let inference = infer(cfg, models, features)?;
    let mut scores = Vec::with_capacity(grid.len());
    for &tau in grid {
        let c = cluster(&PipelineConfig { tau, ..cfg.clone() }, &inference)?;
        scores.push((tau, evaluate(&c, labels).in_stage(Stage::Evaluate)?));
    }
    let best_tau = scores
        .iter()
        .fold(None::<(f64, f64)>, |best, (tau, r)| match best {
            Some((_, f)) if f >= r.pairwise.f => best,
            _ => Some((*tau, r.pairwise.f)),
        })
        .map(|b| b.0)
        .unwrap_or(cfg.tau);
    Ok(TauSweep { best_tau, scores })
}
