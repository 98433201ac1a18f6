mod common;

use angular_gap::calibration::*;
use angular_gap::geometry::{angular_gap, AngleProfile};
use angular_gap::metrics::spearman;
use angular_gap::data::synthetic::{generate_synthetic, SyntheticSpec};
use angular_gap::trainer::{train, TrainConfig};
use angular_gap::{Error, Exec};
use rand::Rng;

const SCALE: f64 = 10.0;

fn random_rows(rng: &mut impl Rng, n: usize, classes: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..classes).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * 0.6).collect())
        .collect()
}

/// Labels drawn from the model's own predictive distribution.
fn self_consistent_labels(rng: &mut impl Rng, rows: &[Vec<f64>]) -> Vec<usize> {
    rows.iter()
        .map(|c| {
            let logits: Vec<f64> = c.iter().map(|v| SCALE * v).collect();
            let p = common::softmax(&logits);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, pk) in p.iter().enumerate() {
                acc += pk;
                if u < acc {
                    return k;
                }
            }
            p.len() - 1
        })
        .collect()
}

fn nll(rows: &[Vec<f64>], labels: &[usize], st: f64) -> f64 {
    let mut total = 0.0;
    for (c, &y) in rows.iter().zip(labels) {
        let logits: Vec<f64> = c.iter().map(|v| SCALE * st * v).collect();
        total -= common::softmax(&logits)[y].ln();
    }
    total / rows.len() as f64
}

fn grid_argmin(rows: &[Vec<f64>], labels: &[usize], lo: f64, hi: f64, steps: usize) -> f64 {
    (1..=steps)
        .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
        .min_by(|a, b| nll(rows, labels, *a).total_cmp(&nll(rows, labels, *b)))
        .unwrap()
}

#[test]
fn self_consistent_model_stays_near_identity() {
    let mut rng = common::rng(51);
    let rows = random_rows(&mut rng, 3000, 5);
    let labels = self_consistent_labels(&mut rng, &rows);
    let (params, report) = fit_on_cosines(&rows, &labels, SCALE, CalibrationKind::Global, &CalibrationConfig::default()).unwrap();
    let CalibrationParams::Global { scale } = params else { panic!("wrong kind") };
    assert!((0.9..=1.1).contains(&scale), "fitted {scale}");
    let grid = grid_argmin(&rows, &labels, 0.5, 1.5, 200);
    assert!((0.9..=1.1).contains(&grid));
    assert!((scale - grid).abs() <= 0.01, "fit {scale} vs grid {grid}");
    assert!(report.final_nll <= report.initial_nll);
    assert!((report.final_nll - nll(&rows, &labels, scale)).abs() < 1e-10);
}

#[test]
fn overconfident_model_is_shrunk() {
    let mut rng = common::rng(52);
    let rows = random_rows(&mut rng, 3000, 5);
    let labels = self_consistent_labels(&mut rng, &rows);
    let inflated: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| 3.0 * v).collect()).collect();
    let (params, report) = fit_on_cosines(&inflated, &labels, SCALE, CalibrationKind::Global, &CalibrationConfig::default()).unwrap();
    let CalibrationParams::Global { scale } = params else { panic!("wrong kind") };
    let grid = grid_argmin(&inflated, &labels, 0.0, 2.0, 400);
    assert!(grid < 1.0);
    assert!(scale < 1.0, "fitted {scale}");
    assert!((scale - grid).abs() <= 0.01, "fit {scale} vs grid {grid}");
    assert!(report.final_ece < report.initial_ece);
    assert!(report.final_nll < report.initial_nll);
}

#[test]
fn every_kind_improves_on_its_start() {
    let mut rng = common::rng(53);
    for trial in 0..5 {
        let rows = random_rows(&mut rng, 400, 4);
        let labels = self_consistent_labels(&mut rng, &rows);
        for kind in [CalibrationKind::Global, CalibrationKind::Classwise, CalibrationKind::Temperature] {
            let (params, report) = fit_on_cosines(&rows, &labels, SCALE, kind, &CalibrationConfig::default()).unwrap();
            assert!(report.final_nll <= report.initial_nll, "trial {trial} {kind:?}");
            params.validate().unwrap();
            assert!(params.to_vec().iter().all(|&v| v >= 1e-4));
        }
    }
}

#[test]
fn temperature_and_global_agree() {
    let mut rng = common::rng(54);
    let rows = random_rows(&mut rng, 1000, 3);
    let labels = self_consistent_labels(&mut rng, &rows);
    let inflated: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
    let cfg = CalibrationConfig::default();
    let (g, _) = fit_on_cosines(&inflated, &labels, SCALE, CalibrationKind::Global, &cfg).unwrap();
    let (t, _) = fit_on_cosines(&inflated, &labels, SCALE, CalibrationKind::Temperature, &cfg).unwrap();
    assert!((g.to_vec()[0] - 1.0 / t.to_vec()[0]).abs() < 1e-3);
}

#[test]
fn degenerate_inputs_are_rejected() {
    let cfg = CalibrationConfig::default();
    let rows = vec![vec![0.5], vec![0.2]];
    assert!(fit_on_cosines(&rows, &[0, 0], SCALE, CalibrationKind::Classwise, &cfg).is_err());
    assert!(CalibrationParams::identity(CalibrationKind::Classwise, 1).is_err());
    assert!(fit_on_cosines(&[], &[], SCALE, CalibrationKind::Global, &cfg).is_err());
    let rows = vec![vec![0.5, f64::NAN]];
    assert!(fit_on_cosines(&rows, &[0], SCALE, CalibrationKind::Global, &cfg).is_err());
}

#[test]
fn holdout_must_be_disjoint_from_training() {
    let data = generate_synthetic(&SyntheticSpec {
        classes: 3,
        dim: 4,
        points_per_class: 30,
        separation: std::f64::consts::FRAC_PI_2,
        spread: 0.4,
        noise_rate: 0.0,
        seed: 3,
    })
    .unwrap()
    .dataset;
    let (train_split, holdout) = data.split_holdout(0.2, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let model = train(&train_split, &cfg, None, Exec::Sequential).unwrap().model;
    let ok = fit_calibration(&model, &holdout, CalibrationKind::Global, &CalibrationConfig::default(), Some(&train_split));
    assert!(ok.is_ok());
    let overlap = fit_calibration(&model, &data, CalibrationKind::Global, &CalibrationConfig::default(), Some(&train_split));
    assert!(overlap.is_err());
}

#[test]
fn apply_examples() {
    let p = AngleProfile::from_cosines(vec![0.8, -0.4]).unwrap();
    let half = CalibrationParams::Global { scale: 0.5 };
    assert_eq!(apply_calibration(&half, CalibrationInput::Profile(&p)).unwrap(), vec![0.4, -0.2]);
    let cw = CalibrationParams::Classwise { scales: vec![1.0, 1.0, 1.0] };
    assert!(matches!(apply_calibration(&cw, CalibrationInput::Profile(&p)), Err(Error::LengthMismatch { .. })));
    assert!(apply_calibration(&half, CalibrationInput::Logits(&[1.0, 2.0])).is_err());

    let p = AngleProfile::from_cosines(vec![0.3, 0.5, 0.1]).unwrap();
    let cw = CalibrationParams::Classwise { scales: vec![2.0, 1.0, 1.0] };
    assert!((calibrated_angular_gap(&cw, &p, 0).unwrap() - 0.1).abs() < 1e-15);
    assert!((angular_gap(&p, 0).unwrap() + 0.2).abs() < 1e-15);
    let double = CalibrationParams::Global { scale: 2.0 };
    assert_eq!(calibrated_angular_gap(&double, &p, 1).unwrap(), 2.0 * angular_gap(&p, 1).unwrap());
}

#[test]
fn global_calibration_preserves_ranking() {
    let mut rng = common::rng(55);
    let rows = random_rows(&mut rng, 300, 6);
    let labels: Vec<usize> = (0..300).map(|_| rng.random_range(0..6)).collect();
    let raw: Vec<f64> = rows.iter().zip(&labels).map(|(c, &y)| common::gap(c, y)).collect();
    for st in [1e-3, 0.37, 1.0, 4.2] {
        let params = CalibrationParams::Global { scale: st };
        let eq = CalibrationParams::Classwise { scales: vec![st; 6] };
        let cal: Vec<f64> = rows
            .iter()
            .zip(&labels)
            .map(|(c, &y)| {
                let p = AngleProfile::from_cosines(c.clone()).unwrap();
                let g = calibrated_angular_gap(&params, &p, y).unwrap();
                assert_eq!(g, calibrated_angular_gap(&eq, &p, y).unwrap());
                g
            })
            .collect();
        assert_eq!(spearman(&raw, &cal).unwrap().coefficient, 1.0);
    }
}

#[test]
fn identity_leaves_ece_unchanged() {
    let mut rng = common::rng(56);
    let rows = random_rows(&mut rng, 500, 4);
    let labels = self_consistent_labels(&mut rng, &rows);
    let mut conf = Vec::new();
    let mut correct = Vec::new();
    for (c, &y) in rows.iter().zip(&labels) {
        let p = common::softmax(&c.iter().map(|v| SCALE * v).collect::<Vec<_>>());
        let k = angular_gap::geometry::argmax(&p);
        conf.push(p[k]);
        correct.push(k == y);
    }
    let raw = common::ece(&conf, &correct, 15);
    for kind in [CalibrationKind::Global, CalibrationKind::Classwise, CalibrationKind::Temperature] {
        let id = CalibrationParams::identity(kind, 4).unwrap();
        assert!((calibrated_ece(&id, SCALE, &rows, &labels, 15).unwrap() - raw).abs() < 1e-12);
    }
}
