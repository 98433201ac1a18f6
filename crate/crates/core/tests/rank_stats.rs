mod common;

use angular_gap::metrics::*;
use angular_gap::Error;
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn two_sided(z: f64) -> f64 {
    2.0 * (1.0 - Normal::standard().cdf(z.abs()))
}

/// Values drawn from a small grid so that ties are common.
fn tied(rng: &mut impl Rng, n: usize, levels: u32) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect()
}

#[test]
fn spearman_and_kendall_examples() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 4.0, 6.0, 8.0, 10.0];
    assert_eq!(spearman(&a, &b).unwrap().coefficient, 1.0);
    assert_eq!(kendall(&a, &b).unwrap().coefficient, 1.0);
    let rev: Vec<f64> = b.iter().rev().copied().collect();
    assert_eq!(spearman(&a, &rev).unwrap().coefficient, -1.0);
    assert_eq!(kendall(&a, &rev).unwrap().coefficient, -1.0);
    assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ConstantInput(_))));
    assert!(matches!(kendall(&[1.0, 2.0], &[4.0, 4.0]), Err(Error::ConstantInput(_))));
    assert!(spearman(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    assert!(kendall(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn correlations_match_pair_counting_with_ties() {
    let mut rng = common::rng(31);
    for case in 0..200 {
        let n = 3 + case % 60;
        let a = tied(&mut rng, n, 2 + (case % 7) as u32);
        let b = tied(&mut rng, n, 2 + (case % 5) as u32);
        if a.iter().all(|&v| v == a[0]) || b.iter().all(|&v| v == b[0]) {
            continue;
        }
        let rho = spearman(&a, &b).unwrap().coefficient;
        let tau = kendall(&a, &b).unwrap().coefficient;
        assert!((rho - common::spearman(&a, &b)).abs() < 1e-12, "case {case}");
        assert!((tau - common::kendall_tau_b(&a, &b)).abs() < 1e-12, "case {case}");
        assert_eq!(average_ranks(&a), common::ranks(&a));
    }
}

#[test]
fn p_values_follow_the_normal_approximation() {
    let mut rng = common::rng(32);
    for _ in 0..50 {
        let n = rng.random_range(10..80);
        let a = common::gauss(&mut rng, n);
        let b: Vec<f64> = a.iter().map(|v| v + 2.0 * rng.random::<f64>()).collect();
        let nf = n as f64;
        let s = spearman(&a, &b).unwrap();
        assert!((s.p_value - two_sided(s.coefficient * (nf - 1.0).sqrt())).abs() < 1e-9);
        // Without ties the tau-b variance reduces to n(n-1)(2n+5)/18.
        let k = kendall(&a, &b).unwrap();
        let z = 3.0 * k.coefficient * (nf * (nf - 1.0)).sqrt() / (2.0 * (2.0 * nf + 5.0)).sqrt();
        assert!((k.p_value - two_sided(z)).abs() < 1e-9);
        assert_eq!(k.n, n);
    }
}

#[test]
fn ece_matches_bin_scan() {
    let mut rng = common::rng(33);
    for case in 0..200 {
        let n = 1 + case % 300;
        let conf: Vec<f64> = (0..n)
            .map(|i| match i % 7 {
                // Exercise exact bin edges and the top value.
                0 => (rng.random_range(0..=15) as f64) / 15.0,
                _ => rng.random::<f64>(),
            })
            .collect();
        let correct: Vec<bool> = conf.iter().map(|&c| rng.random::<f64>() < c).collect();
        let bins = [1, 2, 10, 15, 20][case % 5];
        let (e, rb) = ece(&conf, &correct, bins).unwrap();
        assert!((e - common::ece(&conf, &correct, bins)).abs() < 1e-12, "case {case}");
        assert_eq!(rb.total(), n);
        assert_eq!(rb.bins.len(), bins);
    }
}

#[test]
fn ece_boundaries() {
    assert_eq!(bin_index(0.0, 15), 0);
    assert_eq!(bin_index(1.0, 15), 14);
    assert_eq!(bin_index(0.5, 10), 5);
    assert!(ece(&[], &[], 15).is_err());
    assert!(ece(&[0.5], &[true, false], 15).is_err());
    assert!(ece(&[1.5], &[true], 15).is_err());
    assert!(ece(&[0.5], &[true], 0).is_err());
}

#[test]
fn classwise_reliability_matches_per_class_ece() {
    let mut rng = common::rng(34);
    let probs: Vec<Vec<f64>> = (0..400).map(|_| common::softmax(&common::gauss(&mut rng, 4))).collect();
    let labels: Vec<usize> = (0..400).map(|_| rng.random_range(0..4)).collect();
    let diagrams = classwise_reliability(&probs, &labels, 15).unwrap();
    assert_eq!(diagrams.len(), 4);
    for (k, d) in diagrams.iter().enumerate() {
        assert_eq!(d.scope, BinScope::Class(k));
        let conf: Vec<f64> = probs.iter().map(|p| p[k]).collect();
        let hit: Vec<bool> = labels.iter().map(|&y| y == k).collect();
        assert!((d.ece() - common::ece(&conf, &hit, 15)).abs() < 1e-12);
    }
    let bad = vec![vec![0.7, 0.7]];
    assert!(matches!(classwise_reliability(&bad, &[0], 15), Err(Error::NotProbabilities { .. })));
}

#[test]
fn top_k_examples() {
    let scores = vec![vec![0.1, 0.7, 0.2], vec![0.5, 0.3, 0.2], vec![0.2, 0.2, 0.6]];
    let labels = [1, 1, 0];
    assert!((top_k_accuracy(&scores, &labels, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!((top_k_accuracy(&scores, &labels, 2).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(top_k_accuracy(&scores, &labels, 3).unwrap(), 1.0);
    assert!(top_k_accuracy(&scores, &labels, 0).is_err());
    assert!(top_k_accuracy(&scores, &labels, 4).is_err());
}

proptest! {
    #[test]
    fn correlations_are_bounded_and_symmetric(pairs in prop::collection::vec((0u8..6, 0u8..6), 3..40)) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        prop_assume!(a.iter().any(|&v| v != a[0]) && b.iter().any(|&v| v != b[0]));
        let r1 = spearman(&a, &b).unwrap();
        let r2 = spearman(&b, &a).unwrap();
        prop_assert!((r1.coefficient - r2.coefficient).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&r1.coefficient));
        prop_assert!((0.0..=1.0).contains(&r1.p_value));
        let k1 = kendall(&a, &b).unwrap();
        let k2 = kendall(&b, &a).unwrap();
        prop_assert!((k1.coefficient - k2.coefficient).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&k1.p_value));
    }

    #[test]
    fn correlations_ignore_monotone_transforms(v in prop::collection::vec(-10.0f64..10.0, 3..30), w in prop::collection::vec(-10.0f64..10.0, 30)) {
        let w = &w[..v.len()];
        prop_assume!(v.iter().any(|&x| x != v[0]) && w.iter().any(|&x| x != w[0]));
        let t: Vec<f64> = v.iter().map(|x| x.exp() + 3.0 * x).collect();
        prop_assert!((spearman(&v, w).unwrap().coefficient - spearman(&t, w).unwrap().coefficient).abs() < 1e-12);
        prop_assert!((kendall(&v, w).unwrap().coefficient - kendall(&t, w).unwrap().coefficient).abs() < 1e-12);
    }

    #[test]
    fn top_k_is_monotone_in_k(rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 1..20), seed in 0u64..1000) {
        let mut rng = common::rng(seed);
        let labels: Vec<usize> = rows.iter().map(|_| rng.random_range(0..5)).collect();
        let mut prev = 0.0;
        for k in 1..=5 {
            let acc = top_k_accuracy(&rows, &labels, k).unwrap();
            prop_assert!(acc >= prev);
            prev = acc;
        }
        prop_assert_eq!(prev, 1.0);
    }

    #[test]
    fn ece_is_bounded(conf in prop::collection::vec(0.0f64..=1.0, 1..100), flips in prop::collection::vec(any::<bool>(), 100)) {
        let (e, _) = ece(&conf, &flips[..conf.len()], 15).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }
}
