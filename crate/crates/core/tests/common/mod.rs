//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

pub mod gradients;

use jule3d::net3d::Tensor5;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn random_t5(rng: &mut ChaCha8Rng, shape: [usize; 5]) -> Tensor5<f64> {
    Tensor5::from_vec(shape, random_vec(rng, shape.iter().product())).unwrap()
}

/// Direct seven-loop valid cross-correlation.
pub fn naive_conv3d(input: &Tensor5<f64>, kernels: &Tensor5<f64>, bias: &[f64]) -> Tensor5<f64> {
    let [b_n, c_in, dx, dy, dz] = input.shape();
    let [c_out, _, kx, ky, kz] = kernels.shape();
    let (ox, oy, oz) = (dx - kx + 1, dy - ky + 1, dz - kz + 1);
    let mut out = Vec::with_capacity(b_n * c_out * ox * oy * oz);
    for b in 0..b_n {
        for o in 0..c_out {
            for z in 0..oz {
                for y in 0..oy {
                    for x in 0..ox {
                        let mut acc = bias[o];
                        for c in 0..c_in {
                            for k3 in 0..kz {
                                for k2 in 0..ky {
                                    for k1 in 0..kx {
                                        acc += kernels.at(o, c, k1, k2, k3) * input.at(b, c, x + k1, y + k2, z + k3);
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    Tensor5::from_vec([b_n, c_out, ox, oy, oz], out).unwrap()
}

pub const FD_STEP: f64 = 1e-4;

/// Central finite differences of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest relative discrepancy; entries where both sides are below `1e-7`
/// in magnitude are compared against that floor instead.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-7))
        .fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Dense `n x n` KNN weight matrix from a full sort of every distance row.
pub fn brute_knn_weights(points: &[Vec<f64>], ks: usize, a: f64) -> Vec<Vec<f64>> {
    let n = points.len();
    let k = ks.min(n - 1);
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut order: Vec<(f64, usize)> =
            (0..n).filter(|&j| j != i).map(|j| (sq_dist(&points[i], &points[j]), j)).collect();
        order.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap().then(p.1.cmp(&q.1)));
        let near = &order[..k];
        let sigma2 = near.iter().map(|p| p.0).sum::<f64>() / k as f64;
        for &(d2, j) in near {
            w[i][j] = if sigma2 == 0.0 { 1.0 } else { (-d2 / (a * sigma2)).exp() };
        }
    }
    w
}

/// Greedy agglomeration recomputing every pair affinity at every step.
pub fn brute_agglomerate(w: &[Vec<f64>], target: usize) -> Vec<usize> {
    let n = w.len();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let half = |a: &[usize], b: &[usize]| -> f64 {
        let s: f64 = a
            .iter()
            .map(|&i| {
                let indeg: f64 = b.iter().map(|&j| w[j][i]).sum();
                let outdeg: f64 = b.iter().map(|&j| w[i][j]).sum();
                indeg * outdeg
            })
            .sum();
        s / (a.len() * a.len()) as f64
    };
    while clusters.len() > target {
        let mut best: Option<(f64, usize, usize)> = None;
        for p in 0..clusters.len() {
            for q in p + 1..clusters.len() {
                let aff = half(&clusters[p], &clusters[q]) + half(&clusters[q], &clusters[p]);
                if best.map_or(true, |b| aff > b.0) {
                    best = Some((aff, p, q));
                }
            }
        }
        let (_, p, q) = best.unwrap();
        let moved = clusters.remove(q);
        clusters[p].extend(moved);
        clusters[p].sort_unstable();
    }
    let mut labels = vec![0; n];
    for (c, mem) in clusters.iter().enumerate() {
        for &i in mem {
            labels[i] = c;
        }
    }
    labels
}

/// Minimum k-means objective over every split of `points` into `k` nonempty groups.
pub fn exhaustive_kmeans_optimum(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    loop {
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        if counts.iter().all(|&c| c > 0) {
            let cost: f64 = points
                .iter()
                .zip(&labels)
                .map(|(p, &l)| {
                    let mean: Vec<f64> = sums[l].iter().map(|s| s / counts[l] as f64).collect();
                    sq_dist(p, &mean)
                })
                .sum();
            best = best.min(cost);
        }
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn flatten(points: &[Vec<f64>]) -> jule3d::cluster::FeatureMatrix {
    jule3d::cluster::FeatureMatrix::new(points.len(), points[0].len(), points.concat()).unwrap()
}

/// Textbook between-class variance `sum_k w_k (mu_k - mu)^2` over bin indices.
pub fn between_class_variance(counts: &[u64], cuts: &[usize]) -> f64 {
    let total: u64 = counts.iter().sum();
    let mean = counts.iter().enumerate().map(|(b, &c)| b as f64 * c as f64).sum::<f64>() / total as f64;
    let mut edges = vec![0];
    edges.extend_from_slice(cuts);
    edges.push(counts.len());
    edges
        .windows(2)
        .map(|e| {
            let n: u64 = counts[e[0]..e[1]].iter().sum();
            if n == 0 {
                return 0.0;
            }
            let mu = (e[0]..e[1]).map(|b| b as f64 * counts[b] as f64).sum::<f64>() / n as f64;
            n as f64 / total as f64 * (mu - mean).powi(2)
        })
        .sum()
}

/// Thresholds maximizing the between-class variance over every cut placement.
pub fn brute_otsu(counts: &[u64], levels: usize) -> Vec<usize> {
    let bins = counts.len();
    let mut cands: Vec<Vec<usize>> = Vec::new();
    if levels == 1 {
        cands.extend((1..bins).map(|t| vec![t]));
    } else {
        for t1 in 1..bins {
            for t2 in t1 + 1..bins {
                cands.push(vec![t1, t2]);
            }
        }
    }
    let scores: Vec<f64> = cands.iter().map(|c| between_class_variance(counts, c)).collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Lowest thresholds among candidates within rounding of the optimum.
    let i = scores.iter().position(|&s| s >= best - 1e-9 * best.abs()).unwrap();
    cands.swap_remove(i)
}
