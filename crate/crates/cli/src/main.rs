use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vecluster::confidence::{confidence_variant, predict_confidence, train_gcnv, ConfidenceKind};
use vecluster::connectivity::{predict_for_vertices, select_top_rho, train_gcne, training_set};
use vecluster::engine::GcnModel;
use vecluster::graph::{build_knn_graph, rebuild_graph};
use vecluster::io;
use vecluster::metrics::{evaluate, ScoreReport};
use vecluster::partition::{choose_links, extract_clusters};
use vecluster::pipeline::{self, stage_seed, PipelineConfig};
use vecluster::synth::generate_synthetic;

#[derive(Parser)]
#[command(name = "vecluster", version, about = "Supervised clustering on KNN affinity graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Pipeline settings: defaults, then `--config`, then individual flags.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// key = value file with pipeline settings
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    gcnv_layers: Option<usize>,
    #[arg(long)]
    gcne_layers: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    gcnv_epochs: Option<usize>,
    #[arg(long)]
    gcne_epochs: Option<usize>,
    /// u_num, u_weight, s_avg, s_center, s_nbr or s_nbr_f
    #[arg(long)]
    confidence_kind: Option<ConfidenceKind>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                PipelineConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set! {
            k => cfg.k,
            tau => cfg.tau,
            rho => cfg.rho,
            m => cfg.m,
            gcnv_layers => cfg.gcnv_layers,
            gcne_layers => cfg.gcne_layers,
            learning_rate => cfg.train.learning_rate,
            momentum => cfg.train.momentum,
            weight_decay => cfg.train.weight_decay,
            gcnv_epochs => cfg.train.epochs,
            gcne_epochs => cfg.gcne_epochs,
            confidence_kind => cfg.confidence_kind,
            seed => cfg.seed,
        }
        if self.hidden_dim.is_some() {
            cfg.hidden_dim = self.hidden_dim;
        }
        if self.radius.is_some() {
            cfg.radius = self.radius;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate Gaussian blobs on the unit sphere
    Synth {
        #[arg(long, default_value_t = 100)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        points_per_class: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0.08)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        features_out: PathBuf,
        #[arg(long)]
        labels_out: PathBuf,
    },
    /// Build the cosine KNN graph of a feature file
    BuildGraph {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train GCN-V on a labeled graph
    TrainV {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        /// one loss value per epoch
        #[arg(long)]
        loss_out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Predict vertex confidence (or compute an unsupervised variant)
    InferV {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// required for the supervised confidence kinds
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// one confidence per line, for inspection
        #[arg(long)]
        text_out: Option<PathBuf>,
        /// final-layer embeddings as a feature file
        #[arg(long)]
        embeddings_out: Option<PathBuf>,
        /// KNN graph rebuilt from the embeddings
        #[arg(long)]
        rebuilt_graph_out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train GCN-E on candidate subgraphs of a labeled graph
    TrainE {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long)]
        loss_out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score candidate links of the top-rho most confident vertices
    InferE {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        confidence: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Link vertices to more confident neighbors and emit cluster labels
    Partition {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        confidence: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score cluster labels against ground truth
    Evaluate {
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Train on one labeled set and cluster another
    Run {
        #[arg(long)]
        train_features: PathBuf,
        #[arg(long)]
        train_labels: PathBuf,
        #[arg(long)]
        test_features: PathBuf,
        #[arg(long)]
        test_labels: Option<PathBuf>,
        #[arg(long)]
        clusters_out: PathBuf,
        #[arg(long)]
        report_out: Option<PathBuf>,
        /// comma-separated tau values scored on the training set; the best replaces --tau
        #[arg(long, value_delimiter = ',')]
        tau_grid: Vec<f64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn emit_report(report: &ScoreReport, out: Option<&Path>) -> Result<()> {
    println!("{report}");
    println!("{}", report.to_kv_line());
    if let Some(path) = out {
        write(path, format!("{}\n", report.to_kv_line()))?;
    }
    Ok(())
}

fn losses_text(history: &[f64]) -> String {
    history.iter().map(|l| format!("{l:e}\n")).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            classes,
            points_per_class,
            dim,
            sigma,
            seed,
            features_out,
            labels_out,
        } => {
            let (f, l) = generate_synthetic(classes, points_per_class, dim, sigma, seed)?;
            io::write_features(&features_out, &f)?;
            io::write_labels(&labels_out, &l)?;
        }
        Command::BuildGraph { features, out, cfg } => {
            let cfg = cfg.resolve()?;
            let f = io::read_features(&features)?;
            io::write_graph(&out, &build_knn_graph(&f, cfg.k)?)?;
        }
        Command::TrainV {
            features,
            graph,
            labels,
            model_out,
            loss_out,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            if !cfg.confidence_kind.is_supervised() {
                bail!("confidence kind {} needs no training", cfg.confidence_kind);
            }
            let f = io::read_features(&features)?;
            let g = io::read_graph(&graph)?;
            let l = io::read_labels(&labels)?;
            let targets = pipeline::training_targets(&cfg, &g, &f, &l)?;
            let hidden = vec![cfg.hidden_dim.unwrap_or(f.cols()); cfg.gcnv_layers];
            let model = GcnModel::init(f.cols(), &hidden, stage_seed(cfg.seed, "gcnv-init"))?;
            let tc = vecluster::engine::TrainConfig {
                seed: stage_seed(cfg.seed, "gcnv"),
                ..cfg.train.clone()
            };
            let (model, history) = train_gcnv(model, &g.normalized_adjacency(), &f, &targets, &tc)?;
            io::write_model(&model_out, &model)?;
            if let Some(path) = loss_out {
                write(&path, losses_text(&history))?;
            }
        }
        Command::InferV {
            features,
            graph,
            model,
            out,
            text_out,
            embeddings_out,
            rebuilt_graph_out,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let f = io::read_features(&features)?;
            let g = io::read_graph(&graph)?;
            let (conf, emb) = if cfg.confidence_kind.is_supervised() {
                let path = model.context("--model is required for supervised confidence kinds")?;
                let m = io::read_model(&path)?;
                let (conf, emb) = predict_confidence(&m, &g.normalized_adjacency(), &f)?;
                (conf, Some(emb))
            } else {
                let conf = confidence_variant(&g, None, &f, cfg.confidence_kind, cfg.radius)?;
                (conf, None)
            };
            io::write_confidence(&out, &conf)?;
            if let Some(path) = text_out {
                write(&path, io::format_confidence_text(&conf))?;
            }
            if embeddings_out.is_some() || rebuilt_graph_out.is_some() {
                let emb = emb.context("embeddings need a trained confidence model")?;
                if let Some(path) = embeddings_out {
                    io::write_features(&path, &emb)?;
                }
                if let Some(path) = rebuilt_graph_out {
                    io::write_graph(&path, &rebuild_graph(&emb, cfg.k)?)?;
                }
            }
        }
        Command::TrainE {
            features,
            graph,
            labels,
            model_out,
            loss_out,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let f = io::read_features(&features)?;
            let g = io::read_graph(&graph)?;
            let l = io::read_labels(&labels)?;
            let conf = pipeline::training_targets(&cfg, &g, &f, &l)?;
            let dataset = training_set(&g, &f, &l, &conf)?;
            let hidden = vec![cfg.hidden_dim.unwrap_or(f.cols()); cfg.gcne_layers];
            let model = GcnModel::init(f.cols(), &hidden, stage_seed(cfg.seed, "gcne-init"))?;
            let tc = vecluster::engine::TrainConfig {
                epochs: cfg.gcne_epochs,
                seed: stage_seed(cfg.seed, "gcne"),
                ..cfg.train.clone()
            };
            let (model, history) = train_gcne(model, &dataset, &tc)?;
            io::write_model(&model_out, &model)?;
            if let Some(path) = loss_out {
                write(&path, losses_text(&history))?;
            }
        }
        Command::InferE {
            features,
            graph,
            confidence,
            model,
            out,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let f = io::read_features(&features)?;
            let g = io::read_graph(&graph)?;
            let conf = io::read_confidence(&confidence)?;
            let m = io::read_model(&model)?;
            let top = select_top_rho(&conf, cfg.rho)?;
            io::write_predictions(&out, &predict_for_vertices(&m, &top, &g, &f, &conf)?)?;
        }
        Command::Partition {
            graph,
            confidence,
            predictions,
            out,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let g = io::read_graph(&graph)?;
            let conf = io::read_confidence(&confidence)?;
            let preds = predictions.as_deref().map(io::read_predictions).transpose()?;
            let rho_set = match preds {
                Some(_) => select_top_rho(&conf, cfg.rho)?,
                None => Vec::new(),
            };
            let links = choose_links(&g, &conf, preds.as_deref(), &rho_set, cfg.m, cfg.tau)?;
            io::write_clusters(&out, &extract_clusters(&links, g.n())?)?;
        }
        Command::Evaluate {
            clusters,
            labels,
            report_out,
        } => {
            let report = evaluate(&io::read_clusters(&clusters)?, &io::read_labels(&labels)?)?;
            emit_report(&report, report_out.as_deref())?;
        }
        Command::Run {
            train_features,
            train_labels,
            test_features,
            test_labels,
            clusters_out,
            report_out,
            tau_grid,
            cfg,
        } => {
            let mut cfg = cfg.resolve()?;
            let tf = io::read_features(&train_features)?;
            let tl = io::read_labels(&train_labels)?;
            let sf = io::read_features(&test_features)?;
            let sl = test_labels.as_deref().map(io::read_labels).transpose()?;
            let models = pipeline::fit(&cfg, &tf, &tl)?;
            if !tau_grid.is_empty() {
                cfg.tau = pipeline::sweep_tau(&cfg, &models, &tf, &tl, &tau_grid)?.best_tau;
                eprintln!("tau = {}", cfg.tau);
            }
            let inference = pipeline::infer(&cfg, &models, &sf)?;
            let clusters = pipeline::cluster(&cfg, &inference)?;
            io::write_clusters(&clusters_out, &clusters)?;
            if let Some(gt) = sl {
                emit_report(&evaluate(&clusters, &gt)?, report_out.as_deref())?;
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
