//! Clustering routines against brute-force oracles and property checks.

mod common;

use common::*;
use jule3d::cluster::*;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn knn_neighbor_sets_match_full_sort() {
    let mut r = rng(11);
    for trial in 0..40 {
        let n = r.gen_range(2..30);
        let ks = if trial == 0 { 2 } else { r.gen_range(1..8) };
        let pts = random_points(&mut r, if trial == 0 { 5 } else { n }, 2);
        let g = build_knn_graph(&flatten(&pts), ks, 1.0).unwrap();
        let w = brute_knn_weights(&pts, ks, 1.0);
        for i in 0..pts.len() {
            let mut got: Vec<usize> = g.neighbors(i).to_vec();
            got.sort_unstable();
            let want: Vec<usize> = (0..pts.len()).filter(|&j| w[i][j] > 0.0).collect();
            assert_eq!(got, want, "trial {trial}, node {i}");
            for (&j, &wij) in g.neighbors(i).iter().zip(g.weights(i)) {
                assert!((wij - w[i][j]).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn agglomerate_matches_greedy_oracle() {
    let mut r = rng(12);
    for instance in 0..50 {
        let n = if instance == 0 { 12 } else { r.gen_range(4..=64) };
        let d = r.gen_range(1..=4);
        let ks = r.gen_range(2..=10);
        let target = if instance == 0 { 3 } else { r.gen_range(1..n) };
        let pts = random_points(&mut r, n, d);
        let want = brute_agglomerate(&brute_knn_weights(&pts, ks, 1.0), target);
        let got = agglomerate(&flatten(&pts), target, ks, 1.0).unwrap();
        assert_eq!(got.labels(), &want[..], "instance {instance}: n={n} d={d} ks={ks} target={target}");
        assert_eq!(got.clusters(), target);
    }
}

#[test]
fn kmeans_against_exhaustive_partitions() {
    let mut r = rng(13);
    for trial in 0..60 {
        let n = r.gen_range(2..=8);
        let k = r.gen_range(1..=3.min(n));
        let pts = random_points(&mut r, n, 2);
        let res = kmeans(&flatten(&pts), k, trial, DEFAULT_MAX_ITERS).unwrap();
        let opt = exhaustive_kmeans_optimum(&pts, k);
        assert!(res.inertia >= opt - 1e-12, "trial {trial}: {} < {opt}", res.inertia);
        for (i, p) in pts.iter().enumerate() {
            let own = sq_dist(p, res.centroid(res.labels[i]));
            for c in 0..k {
                let other = sq_dist(p, res.centroid(c));
                assert!(own < other || (own == other && res.labels[i] <= c), "trial {trial}: point {i} not Voronoi");
            }
        }
    }
}

#[test]
fn kmeans_finds_the_optimum_on_two_groups() {
    let pts = vec![vec![0.0, 0.0], vec![0.4, 0.1], vec![0.1, 0.5], vec![5.0, 5.0], vec![5.3, 4.9], vec![4.8, 5.4]];
    let opt = exhaustive_kmeans_optimum(&pts, 2);
    let res = kmeans(&flatten(&pts), 2, 3, DEFAULT_MAX_ITERS).unwrap();
    assert!((res.inertia - opt).abs() < 1e-12);
}

fn labels(max_label: usize, len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..max_label, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn nmi_is_symmetric_bounded_and_permutation_invariant(
        (a, b) in (1usize..60).prop_flat_map(|n| (labels(5, n..n + 1), labels(5, n..n + 1))),
        shift in 1usize..5,
    ) {
        let v = nmi(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v - nmi(&b, &a).unwrap()).abs() < 1e-12);
        let permuted: Vec<usize> = a.iter().map(|&l| (l + shift) % 5 + 10).collect();
        prop_assert!((v - nmi(&permuted, &b).unwrap()).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_weights_are_in_unit_interval_and_nested(seed in any::<u64>(), n in 3usize..40, ks in 2usize..8) {
        let pts = random_points(&mut rng(seed), n, 3);
        let x = flatten(&pts);
        let g = build_knn_graph(&x, ks, 1.0).unwrap();
        let smaller = build_knn_graph(&x, ks - 1, 1.0).unwrap();
        for i in 0..n {
            prop_assert!(g.weights(i).iter().all(|&w| w > 0.0 && w <= 1.0));
            prop_assert!(!g.neighbors(i).contains(&i));
            prop_assert_eq!(g.neighbors(i).len(), ks.min(n - 1));
            prop_assert_eq!(&g.neighbors(i)[..smaller.k()], smaller.neighbors(i));
        }
    }

    #[test]
    fn gdl_affinity_is_symmetric(seed in any::<u64>(), n in 4usize..30) {
        let mut r = rng(seed);
        let pts = random_points(&mut r, n, 2);
        let g = build_knn_graph(&flatten(&pts), 4, 1.0).unwrap();
        let split = r.gen_range(1..n);
        let a: Vec<usize> = (0..split).collect();
        let b: Vec<usize> = (split..n).collect();
        let ab = gdl_affinity(&g, &a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, gdl_affinity(&g, &b, &a).unwrap());
    }

    #[test]
    fn kmeans_inertia_never_increases(seed in any::<u64>(), n in 3usize..80, k in 1usize..6) {
        let pts = random_points(&mut rng(seed), n, 2);
        let k = k.min(n);
        let res = kmeans(&flatten(&pts), k, seed, DEFAULT_MAX_ITERS).unwrap();
        prop_assert!(res.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        if let Some(&last) = res.inertia_trace.last() {
            prop_assert!(res.inertia <= last + 1e-12);
        }
    }
}
