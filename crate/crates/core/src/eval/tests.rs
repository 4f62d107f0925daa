use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::kmeans::partition_sse;

type M = DenseMatrix<f64>;

/// Best matched count over every injective map from predicted labels to true
/// labels (both compacted to `0..k`), by enumerating permutations.
fn brute_force_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let k = pred.iter().chain(truth).max().unwrap() + 1;
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hits = pred.iter().zip(truth).filter(|(a, b)| p[**a] == **b).count();
        best = best.max(hits);
    });
    best as f64 / pred.len() as f64
}

fn permute(a: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == a.len() {
        f(a);
        return;
    }
    for j in i..a.len() {
        a.swap(i, j);
        permute(a, i + 1, f);
        a.swap(i, j);
    }
}

#[test]
fn fuse_examples() {
    let h = M::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
    assert_eq!(fuse(std::slice::from_ref(&h)).unwrap(), h);
    assert_eq!(fuse(&[h.clone(), h.map(|x| -x)]).unwrap(), M::zeros(2, 2));
    let z = fuse(&[M::from_rows(&[[1.0, 0.0]]), M::from_rows(&[[0.0, 1.0]])]).unwrap();
    assert_eq!(z, M::from_rows(&[[0.5, 0.5]]));
    assert!(matches!(fuse(&[h.clone(), M::zeros(2, 3)]), Err(Error::Shape { .. })));
    assert!(fuse::<f64>(&[]).is_err());
}

#[test]
fn cluster_recovers_separated_gaussians() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
    let truth: Vec<usize> = (0..90).map(|i| i / 30).collect();
    let z = M::from_fn(90, 2, |i, j| centers[truth[i]][j] + noise.sample(&mut rng));
    let labels = cluster(&z, 3, &mut rng, DEFAULT_RESTARTS).unwrap();
    assert_eq!(accuracy(&labels, &truth).unwrap(), 1.0);

    let labels = cluster(&z, 1, &mut rng, DEFAULT_RESTARTS).unwrap();
    assert!(labels.iter().all(|&l| l == labels[0]));

    let small = M::from_fn(5, 2, |i, j| (i * 2 + j) as f64);
    let labels = cluster(&small, 5, &mut rng, DEFAULT_RESTARTS).unwrap();
    assert_eq!(partition_sse(&small, &labels), 0.0);
    assert!(matches!(cluster(&small, 6, &mut rng, DEFAULT_RESTARTS), Err(Error::Parameter(_))));
}

#[test]
fn clustering_is_deterministic_per_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = M::from_fn(60, 3, |_, _| rng.random_range(-1.0..1.0));
    let a = cluster(&z, 4, &mut ChaCha8Rng::seed_from_u64(1), DEFAULT_RESTARTS).unwrap();
    let b = cluster(&z, 4, &mut ChaCha8Rng::seed_from_u64(1), DEFAULT_RESTARTS).unwrap();
    assert_eq!(a, b);
}

#[test]
fn accuracy_examples() {
    let truth = [0, 0, 1, 1];
    assert_eq!(accuracy(&truth, &truth).unwrap(), 1.0);
    assert_eq!(accuracy(&[5, 5, 3, 3], &truth).unwrap(), 1.0);
    assert_eq!(accuracy(&[1, 1, 1, 0], &truth).unwrap(), 0.75);
    assert!(matches!(accuracy(&[0], &truth), Err(Error::Contract(_))));
    assert!(matches!(accuracy(&[], &[]), Err(Error::Contract(_))));
}

#[test]
fn nmi_examples() {
    let truth = [0, 0, 1, 1];
    assert!((nmi(&truth, &truth).unwrap() - 1.0).abs() < 1e-12);
    assert!((nmi(&[2, 2, 7, 7], &truth).unwrap() - 1.0).abs() < 1e-12);
    assert!(nmi(&[0, 1, 0, 1], &truth).unwrap().abs() < 1e-12);
    assert_eq!(nmi(&[0, 0, 0, 0], &truth).unwrap(), 0.0);
    assert_eq!(nmi(&[3, 3, 3], &[1, 1, 1]).unwrap(), 1.0);

    // 3 clusters against 2 classes, checked against a hand contingency
    // [[2,0],[1,1],[0,2]]: MI = (2/6)ln2·2 + 0 = (2/3)ln 2
    let pred = [0, 0, 1, 1, 2, 2];
    let truth = [0, 0, 0, 1, 1, 1];
    let mi = 2.0 / 3.0 * 2f64.ln();
    let hp = 3f64.ln();
    let ht = 2f64.ln();
    assert!((nmi(&pred, &truth).unwrap() - mi / (hp * ht).sqrt()).abs() < 1e-12);
}

#[test]
fn nmi_near_zero_for_independent_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..5)).collect();
    let b: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..5)).collect();
    assert!(nmi(&a, &b).unwrap() <= 0.05);
}

#[test]
fn purity_examples() {
    let truth = [0, 0, 1, 1];
    assert_eq!(purity(&truth, &truth).unwrap(), 1.0);
    assert_eq!(purity(&[0, 0, 0, 0], &truth).unwrap(), 0.5);
    let p = purity(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]).unwrap();
    assert!((p - 4.0 / 6.0).abs() < 1e-12);
}

#[test]
fn metrics_report_kv() {
    let r = MetricsReport {
        acc: Some(0.5),
        nmi: None,
        pur: Some(1.0),
        k: 3,
        p: 2,
        tau: 0.1,
        lambda: 1.0,
        d: 16,
        seed: 7,
        epochs: 50,
    };
    assert_eq!(
        r.to_kv(),
        "acc=0.5\nnmi=NA\npur=1\nk=3\np=2\ntau=0.1\nlambda=1\nd=16\nseed=7\nepochs=50\n"
    );
}

fn labels(seed: u64, n: usize, k: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn accuracy_matches_brute_force(seed in 0u64..100_000, n in 1usize..40, k in 1usize..=6) {
        let pred = labels(seed, n, k);
        let truth = labels(seed ^ 0xabc, n, k);
        let got = accuracy(&pred, &truth).unwrap();
        let want = brute_force_accuracy(&pred, &truth);
        prop_assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
    }

    #[test]
    fn metrics_are_relabel_invariant_and_bounded(seed in 0u64..100_000, n in 1usize..60, k in 1usize..=6) {
        let pred = labels(seed, n, k);
        let truth = labels(seed ^ 0x123, n, k);
        let mut map: Vec<usize> = (0..k).map(|i| 10 + 3 * i).collect();
        rand::seq::SliceRandom::shuffle(map.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let relabeled: Vec<usize> = pred.iter().map(|&l| map[l]).collect();
        let base = Metrics::compute(&pred, &truth).unwrap();
        let swapped = Metrics::compute(&relabeled, &truth).unwrap();
        let both = Metrics::compute(&relabeled, &pred.iter().map(|&l| map[l]).collect::<Vec<_>>()).unwrap();
        prop_assert!((base.acc - swapped.acc).abs() < 1e-12);
        prop_assert!((base.nmi - swapped.nmi).abs() < 1e-12);
        prop_assert!((base.pur - swapped.pur).abs() < 1e-12);
        prop_assert!(both.acc == 1.0 && both.pur == 1.0);
        for m in [base.acc, base.nmi, base.pur] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        prop_assert!(base.pur >= 1.0 / class_count(&truth) as f64 - 1e-12);
    }
}
