use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{squared_distance, ClusterError, FeatureMatrix};

pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    /// `k x d`, row-major.
    pub centroids: Vec<f64>,
    pub k: usize,
    pub inertia: f64,
    /// Lloyd iterations run.
    pub iterations: usize,
    /// Inertia after each centroid update.
    pub inertia_trace: Vec<f64>,
    pub converged: bool,
}

impl KMeans {
    pub fn centroid(&self, c: usize) -> &[f64] {
        let d = self.centroids.len() / self.k;
        &self.centroids[c * d..(c + 1) * d]
    }
}

fn nearest(x: &[f64], centroids: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.chunks_exact(d).enumerate() {
        let dist = squared_distance(x, mu);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

fn assign(x: &FeatureMatrix, centroids: &[f64]) -> Vec<(usize, f64)> {
    let d = x.dim();
    (0..x.rows()).into_par_iter().with_min_len(4096).map(|i| nearest(x.row(i), centroids, d)).collect()
}

fn plus_plus(x: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (n, d) = (x.rows(), x.dim());
    let mut centroids = Vec::with_capacity(k * d);
    centroids.extend_from_slice(x.row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| squared_distance(x.row(i), &centroids[..d])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &v) in d2.iter().enumerate() {
                acc += v;
                if acc > r && v > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|&v| v > 0.0).unwrap())
        } else {
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(x.row(pick));
        let mu = &centroids[start..];
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(squared_distance(x.row(i), mu));
        }
    }
    centroids
}

/// Gives every empty cluster the point farthest from its current centroid,
/// taken from a cluster that keeps at least one member.
fn repair_empty(x: &FeatureMatrix, k: usize, labels: &mut [usize], dist: &mut [f64], centroids: &mut [f64]) {
    let d = x.dim();
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..labels.len() {
            if sizes[labels[i]] > 1 && far.is_none_or(|f| dist[i] > dist[f]) {
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        sizes[labels[i]] -= 1;
        sizes[c] += 1;
        labels[i] = c;
        dist[i] = 0.0;
        centroids[c * d..(c + 1) * d].copy_from_slice(x.row(i));
    }
}

fn update(x: &FeatureMatrix, k: usize, labels: &[usize], centroids: &mut [f64]) {
    let d = x.dim();
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for (m, s) in centroids[c * d..(c + 1) * d].iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                *m = s * inv;
            }
        }
    }
}

fn inertia(x: &FeatureMatrix, labels: &[usize], centroids: &[f64]) -> f64 {
    let d = x.dim();
    labels.iter().enumerate().map(|(i, &l)| squared_distance(x.row(i), &centroids[l * d..(l + 1) * d])).sum()
}

/// k-means++ seeding followed by Lloyd iterations until the assignment
/// stops changing or `max_iters` updates have run.
///
/// Ties between equidistant centroids go to the lower index. Returned
/// labels are always the nearest-centroid assignment of the returned centroids.
pub fn kmeans(x: &FeatureMatrix, k: usize, seed: u64, max_iters: usize) -> Result<KMeans, ClusterError> {
    let n = x.rows();
    if k == 0 {
        return Err(ClusterError::BadParameter("k must be positive".into()));
    }
    if k > n {
        return Err(ClusterError::TooFewPoints { needed: k, found: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(x, k, &mut rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let (mut next, mut dist): (Vec<usize>, Vec<f64>) = assign(x, &centroids).into_iter().unzip();
        if next == labels {
            converged = true;
            break;
        }
        if iterations == max_iters {
            labels = next;
            break;
        }
        repair_empty(x, k, &mut next, &mut dist, &mut centroids);
        update(x, k, &next, &mut centroids);
        labels = next;
        iterations += 1;
        trace.push(inertia(x, &labels, &centroids));
    }
    let inertia = inertia(x, &labels, &centroids);
    Ok(KMeans { labels, centroids, k, inertia, iterations, inertia_trace: trace, converged })
}
