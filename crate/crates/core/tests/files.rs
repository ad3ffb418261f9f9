use std::fs;

use vecluster::confidence::{ConfidenceSource, ConfidenceVector, LabelVector};
use vecluster::engine::GcnModel;
use vecluster::graph::build_knn_graph;
use vecluster::io;
use vecluster::partition::ClusterAssignment;
use vecluster::synth::generate_synthetic;
use vecluster::Error;

#[test]
fn artifacts_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let (f, l) = generate_synthetic(5, 6, 7, 0.1, 3).unwrap();

    io::write_features(path("x.feat"), &f).unwrap();
    assert_eq!(io::read_features(path("x.feat")).unwrap(), f);

    io::write_labels(path("x.labels"), &l).unwrap();
    assert_eq!(io::read_labels(path("x.labels")).unwrap(), l);

    let g = build_knn_graph(&f, 4).unwrap();
    io::write_graph(path("x.graph"), &g).unwrap();
    let back = io::read_graph(path("x.graph")).unwrap();
    assert_eq!(back.neighbor_lists(), g.neighbor_lists());
    assert_eq!(back.adjacency(), g.adjacency());

    let m = GcnModel::init(7, &[5, 3], 1).unwrap();
    io::write_model(path("x.model"), &m).unwrap();
    let mb = io::read_model(path("x.model")).unwrap();
    assert_eq!(mb.parameter_count(), m.parameter_count());
    for i in 0..m.parameter_count() {
        assert_eq!(mb.parameter(i), f64::from(m.parameter(i) as f32));
    }

    let c = ConfidenceVector::predicted(vec![0.5, -0.25, 0.125]);
    io::write_confidence(path("x.conf"), &c).unwrap();
    let cb = io::read_confidence(path("x.conf")).unwrap();
    assert_eq!((cb.values, cb.source), (c.values, ConfidenceSource::Predicted));

    let clusters = ClusterAssignment::from_labels(&[2, 2, 7, 0]);
    io::write_clusters(path("x.clusters"), &clusters).unwrap();
    assert_eq!(io::read_clusters(path("x.clusters")).unwrap(), clusters);
}

#[test]
fn malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (f, _) = generate_synthetic(2, 2, 3, 0.1, 3).unwrap();
    let mut bytes = io::encode_features(&f);
    bytes.truncate(bytes.len() - 4);
    let p = dir.path().join("short.feat");
    fs::write(&p, &bytes).unwrap();
    match io::read_features(&p).unwrap_err() {
        Error::Format(msg) => assert!(msg.contains("expected 48 payload bytes, found 44"), "{msg}"),
        e => panic!("unexpected error {e}"),
    }

    let p = dir.path().join("bad.labels");
    fs::write(&p, "1\n2\nthree\n").unwrap();
    match io::read_labels(&p).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        e => panic!("unexpected error {e}"),
    }

    assert!(matches!(io::read_graph(dir.path().join("missing")), Err(Error::Io(_))));
}

#[test]
fn labels_are_remapped_by_first_appearance() {
    assert_eq!(io::parse_labels("5\n9\n5\n").unwrap(), LabelVector::new(vec![0, 1, 0]));
    assert!(io::parse_labels("").unwrap().is_empty());
}
