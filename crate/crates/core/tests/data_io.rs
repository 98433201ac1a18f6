mod common;

use std::collections::BTreeMap;
use std::fs;

use angular_gap::calibration::CalibrationParams;
use angular_gap::data::io::*;
use angular_gap::data::synthetic::*;
use angular_gap::metrics::spearman;
use angular_gap::model::{Activation, HiddenLayer};
use angular_gap::scoring::score_dataset;
use angular_gap::trainer::{train, TrainConfig};
use angular_gap::{EmbeddingDataset, Error, Example, Exec, HypersphereModel};

fn tiny() -> EmbeddingDataset {
    EmbeddingDataset::new(
        vec![
            Example {
                id: "a".into(),
                label: 1,
                features: vec![0.1, -2.5e-7, std::f64::consts::PI],
            },
            Example {
                id: "b".into(),
                label: 0,
                features: vec![1.0 / 3.0, 1e300, -0.0],
            },
        ],
        2,
    )
    .unwrap()
}

fn synthetic(seed: u64, noise: f64) -> SyntheticData {
    generate_synthetic(&SyntheticSpec {
        classes: 3,
        dim: 5,
        points_per_class: 40,
        separation: 1.2,
        spread: 0.3,
        noise_rate: noise,
        seed,
    })
    .unwrap()
}

#[test]
fn embeddings_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for (name, format) in [("d.jsonl", Format::Jsonl), ("d.csv", Format::Csv)] {
        let path = dir.path().join(name);
        assert_eq!(Format::from_path(&path), format);
        save_embeddings(&tiny(), &path, format).unwrap();
        let back = load_embeddings(&path, format, Some(2)).unwrap();
        assert_eq!(back, tiny());
        let data = synthetic(1, 0.1).dataset;
        save_embeddings(&data, &path, format).unwrap();
        assert_eq!(load_embeddings(&path, format, None).unwrap(), data);
    }
}

#[test]
fn malformed_embeddings_report_lines() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert!(matches!(load_embeddings(&empty, Format::Jsonl, None), Err(Error::Empty(_))));

    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "id,label,f0,f1\nx,0,1.0,2.0\ny,1,0.5,oops\nz,0,1.0,1.0\n").unwrap();
    match load_embeddings(&csv, Format::Csv, None) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }

    let jsonl = dir.path().join("bad.jsonl");
    fs::write(
        &jsonl,
        "{\"id\":\"x\",\"label\":0,\"features\":[1.0]}\n{\"id\":\"y\",\"label\":0,\"features\":[1.0,\n",
    )
    .unwrap();
    match load_embeddings(&jsonl, Format::Jsonl, None) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a parse error, got {other:?}"),
    }

    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "id,label,f0,f1\nx,0,1.0,2.0\ny,1,0.5\n").unwrap();
    match load_embeddings(&ragged, Format::Csv, None) {
        Err(Error::InconsistentDimension { first_id, id, .. }) => assert_eq!((first_id.as_str(), id.as_str()), ("x", "y")),
        other => panic!("expected a dimension error, got {other:?}"),
    }
}

#[test]
fn hsf_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hsf.csv");
    fs::write(&path, "id,hsf\na,0.25\nb,1\nc,0.0\n").unwrap();
    let expect: BTreeMap<String, f64> = [("a", 0.25), ("b", 1.0), ("c", 0.0)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    assert_eq!(load_hsf(&path).unwrap(), expect);

    fs::write(&path, "id,hsf\na,0.25\na,0.5\n").unwrap();
    assert!(matches!(load_hsf(&path), Err(Error::DuplicateId(id)) if id == "a"));
    fs::write(&path, "id,hsf\na,1.5\n").unwrap();
    assert!(matches!(load_hsf(&path), Err(Error::HsfOutOfRange { .. })));
    fs::write(&path, "id,score\na,0.5\n").unwrap();
    assert!(load_hsf(&path).is_err());
}

#[test]
fn constant_hsf_is_rejected_by_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = tiny();
    let path = dir.path().join("hsf.csv");
    fs::write(&path, "id,hsf\na,1.0\nb,1.0\nzz,1.0\n").unwrap();
    let unmatched = data.attach_hsf(&load_hsf(&path).unwrap());
    assert_eq!(unmatched, vec!["zz".to_string()]);
    let hsf: Vec<f64> = data.examples().iter().map(|e| data.hsf()[&e.id]).collect();
    assert!(matches!(spearman(&[0.3, 0.1], &hsf), Err(Error::ConstantInput(_))));
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synthetic(2, 0.0);
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let model = train(&syn.dataset, &cfg, None, Exec::Sequential).unwrap().model;
    let cal = CalibrationParams::Classwise {
        scales: vec![0.7, 1.0 / 3.0, 1.9],
    };
    let path = dir.path().join("model.json");
    save_checkpoint(&model, Some(&cal), &path).unwrap();
    let (back, back_cal) = load_checkpoint(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(back_cal, Some(cal.clone()));
    let a = score_dataset(&model, &syn.dataset, None, Some(&cal), Exec::Sequential).unwrap();
    let b = score_dataset(&back, &syn.dataset, None, back_cal.as_ref(), Exec::Sequential).unwrap();
    assert_eq!(a, b);

    let mut rng = common::rng(81);
    let hidden = HiddenLayer::random(5, 7, Activation::Relu, &mut rng);
    let deep = HypersphereModel::new_hidden(3, 5, hidden, 12.5, &mut rng).unwrap();
    save_checkpoint(&deep, None, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), (deep, None));
}

#[test]
fn broken_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = common::rng(82);
    let model = HypersphereModel::new_linear(3, 4, 30.0, &mut rng).unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&model, None, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();

    let truncated = dir.path().join("truncated.json");
    fs::write(&truncated, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&truncated), Err(Error::Malformed { .. })));

    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["format_version"] = serde_json::json!(CHECKPOINT_VERSION + 1);
    let future = dir.path().join("future.json");
    fs::write(&future, doc.to_string()).unwrap();
    assert!(matches!(load_checkpoint(&future), Err(Error::VersionMismatch { .. })));

    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["dim"] = serde_json::json!(5);
    let inconsistent = dir.path().join("inconsistent.json");
    fs::write(&inconsistent, doc.to_string()).unwrap();
    assert!(load_checkpoint(&inconsistent).is_err());
}

#[test]
fn report_files() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synthetic(3, 0.1);
    let out = train(&syn.dataset, &TrainConfig { epochs: 3, ..TrainConfig::default() }, None, Exec::Sequential).unwrap();
    let cal = CalibrationParams::Global { scale: 0.8 };
    let report = score_dataset(&out.model, &syn.dataset, Some(&out.dynamics), Some(&cal), Exec::Sequential).unwrap();
    let path = dir.path().join("report.csv");
    write_report(&report, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), report.len() + 1);
    assert_eq!(text.lines().next().unwrap(), REPORT_HEADER.join(","));
    let back = read_report(&path).unwrap();
    for (a, b) in report.records.iter().zip(&back.records) {
        assert_eq!((&a.id, a.label, a.raw_gap, a.calibrated_gap), (&b.id, b.label, b.raw_gap, b.calibrated_gap));
        assert_eq!((a.avh, a.confidence, a.margin, a.forgetting), (b.avh, b.confidence, b.margin, b.forgetting));
    }

    let (_, bins) = angular_gap::metrics::ece(&[0.2, 0.9, 0.95], &[false, true, true], 15).unwrap();
    let rel = dir.path().join("reliability.csv");
    write_reliability_csv(&bins, &rel).unwrap();
    assert_eq!(fs::read_to_string(&rel).unwrap().lines().count(), 16);

    let hist = dir.path().join("history.csv");
    write_history(&out.history, &hist).unwrap();
    assert_eq!(fs::read_to_string(&hist).unwrap().lines().count(), 4);
}

#[test]
fn saves_replace_whole_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    save_embeddings(&synthetic(4, 0.0).dataset, &path, Format::Jsonl).unwrap();
    save_embeddings(&tiny(), &path, Format::Jsonl).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
    let leftovers = fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(leftovers, 1);
}

#[test]
fn synthetic_ground_truth() {
    let a = synthetic(5, 0.2);
    let b = synthetic(5, 0.2);
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.ground_truth, b.ground_truth);
    assert_ne!(synthetic(6, 0.2).dataset, a.dataset);

    let flips = a.flipped.iter().filter(|&&f| f).count();
    assert_eq!(flips, (0.2 * a.dataset.len() as f64).round() as usize);
    for (i, e) in a.dataset.examples().iter().enumerate() {
        assert_eq!(a.flipped[i], e.label != a.true_labels[i]);
        if a.flipped[i] {
            assert_eq!(a.ground_truth[i], FLIPPED_MARGIN);
        } else {
            let cos = common::cosines(&e.features, &a.centers);
            assert!((a.ground_truth[i] - common::gap(&cos, e.label)).abs() < 1e-12);
        }
    }
    // Pairwise center angles match the requested separation.
    for i in 0..3 {
        for j in 0..i {
            let c = common::cosines(&a.centers[i], &[a.centers[j].clone()])[0];
            assert!((c.acos() - 1.2).abs() < 1e-9);
        }
    }
}

#[test]
fn synthetic_edge_cases() {
    let tight = generate_synthetic(&SyntheticSpec {
        classes: 4,
        dim: 4,
        points_per_class: 5,
        separation: 1.0,
        spread: 1e-12,
        noise_rate: 0.0,
        seed: 7,
    })
    .unwrap();
    let own = center_margin(&tight.centers[0], &tight.centers, 0);
    for (e, g) in tight.dataset.examples().iter().zip(&tight.ground_truth) {
        let center_gap = center_margin(&tight.centers[e.label], &tight.centers, e.label);
        assert!((g - center_gap).abs() < 1e-9);
        assert!((g - own).abs() < 1e-9);
    }

    // Antipodal pair in the plane: margin = cos(angle to own) - cos(angle to
    // the other) = 2 cos(angle to own).
    let anti = generate_synthetic(&SyntheticSpec {
        classes: 2,
        dim: 2,
        points_per_class: 50,
        separation: std::f64::consts::PI,
        spread: 0.5,
        noise_rate: 0.0,
        seed: 8,
    })
    .unwrap();
    for ((e, g), &k) in anti.dataset.examples().iter().zip(&anti.ground_truth).zip(&anti.true_labels) {
        let c = common::cosines(&e.features, &[anti.centers[k].clone()])[0];
        assert!((g - 2.0 * c).abs() < 1e-12);
    }

    let bad = SyntheticSpec {
        classes: 5,
        dim: 3,
        points_per_class: 5,
        separation: 1.0,
        spread: 0.1,
        noise_rate: 0.0,
        seed: 0,
    };
    assert!(generate_synthetic(&bad).is_err());
    let obtuse = SyntheticSpec {
        classes: 4,
        dim: 4,
        separation: 2.5,
        ..bad.clone()
    };
    assert!(matches!(generate_synthetic(&obtuse), Err(Error::InfeasibleSeparation(_))));
    assert!(generate_synthetic(&SyntheticSpec { noise_rate: 0.5, dim: 5, ..bad }).is_err());
}
