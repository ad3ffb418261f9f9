use vecluster::confidence::LabelVector;
use vecluster::metrics::evaluate;
use vecluster::pipeline::{run_pipeline, PipelineConfig};
use vecluster::synth::{generate_synthetic, nearest_neighbor_accuracy};
use vecluster::tensor::DenseMatrix;
use vecluster::{Error, Stage};

fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig {
        k: 25,
        rho: 0.0,
        seed: 11,
        ..Default::default()
    };
    cfg.train.epochs = 40;
    cfg
}

#[test]
fn zero_noise_train_equals_test_is_perfect() {
    let (f, l) = generate_synthetic(20, 20, 16, 0.0, 4).unwrap();
    let out = run_pipeline(&small_config(), &f, &l, &f, Some(&l)).unwrap();
    let report = out.report.unwrap();
    assert_eq!(report.pairwise.f, 1.0);
    assert_eq!(report.bcubed.f, 1.0);
    assert_eq!(report.num_pred_clusters, 20);
}

#[test]
fn fixed_seed_runs_are_identical() {
    let (f, l) = generate_synthetic(12, 15, 16, 0.12, 9).unwrap();
    let cfg = PipelineConfig {
        k: 8,
        rho: 0.3,
        gcne_epochs: 2,
        ..small_config()
    };
    let a = run_pipeline(&cfg, &f, &l, &f, Some(&l)).unwrap();
    let b = run_pipeline(&cfg, &f, &l, &f, Some(&l)).unwrap();
    assert_eq!(a.clusters, b.clusters);
    assert_eq!(a.report, b.report);
    assert_eq!(a.models.confidence, b.models.confidence);
    assert_eq!(a.models.connectivity, b.models.connectivity);
}

#[test]
fn report_matches_separate_evaluation() {
    let (f, l) = generate_synthetic(10, 12, 8, 0.1, 2).unwrap();
    let out = run_pipeline(&small_config(), &f, &l, &f, Some(&l)).unwrap();
    assert_eq!(out.report.unwrap(), evaluate(&out.clusters, &l).unwrap());
    assert!(run_pipeline(&small_config(), &f, &l, &f, None).unwrap().report.is_none());
}

#[test]
fn documented_noise_level_is_nearly_separable() {
    let (f, l) = generate_synthetic(100, 100, 64, 0.08, 0).unwrap();
    assert!(nearest_neighbor_accuracy(&f, &l) >= 0.99);
}

#[test]
fn failures_carry_the_stage_name() {
    let (f, l) = generate_synthetic(4, 5, 6, 0.1, 1).unwrap();
    let short = LabelVector::new(vec![0; 3]);
    let mut cfg = small_config();
    cfg.k = 3;
    match run_pipeline(&cfg, &f, &l, &DenseMatrix::zeros(1, 6), None).unwrap_err() {
        Error::Stage { stage, .. } => assert_eq!(stage, Stage::BuildGraph),
        e => panic!("unexpected error {e}"),
    }
    let err = run_pipeline(&cfg, &f, &short, &f, None).unwrap_err();
    assert!(err.to_string().contains("labels"), "{err}");
    let err = run_pipeline(&cfg, &f, &l, &DenseMatrix::zeros(5, 2), None).unwrap_err();
    assert!(err.to_string().contains("dims"), "{err}");
}
