use rayon::prelude::*;

use super::{squared_distance, ClusterError, FeatureMatrix};

pub const DEFAULT_KS: usize = 20;
pub const DEFAULT_SCALE: f64 = 1.0;

/// Directed weighted KNN graph with `k` out-edges per node, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    n: usize,
    k: usize,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    sigma2: Vec<f64>,
    // In-edges in CSR form: sources and weights sorted by source.
    in_start: Vec<usize>,
    in_src: Vec<usize>,
    in_w: Vec<f64>,
}

impl KnnGraph {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Out-degree of every node.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Out-neighbors of `i`, nearest first.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    /// `W(i -> j)` for each `j` in [`KnnGraph::neighbors`].
    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i * self.k..(i + 1) * self.k]
    }

    /// Mean squared distance from `i` to its neighbors.
    pub fn sigma2(&self, i: usize) -> f64 {
        self.sigma2[i]
    }

    /// Sources of edges into `i` (ascending) and their weights.
    pub fn in_edges(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.in_start[i]..self.in_start[i + 1];
        (&self.in_src[r.clone()], &self.in_w[r])
    }

    /// `W(i -> j)`, zero when there is no such edge.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.neighbors(i).iter().position(|&x| x == j).map_or(0.0, |p| self.weights(i)[p])
    }

    /// True when some node has all neighbors at distance zero, so its
    /// local scale vanishes and its edge weights were set to 1.
    pub fn is_degenerate(&self) -> bool {
        self.sigma2.contains(&0.0)
    }
}

/// Builds the KNN graph with `W(i->j) = exp(-|xi - xj|^2 / (a * sigma_i^2))`.
///
/// Neighbors are the `min(ks, n - 1)` nearest points, ties going to the
/// lower index. A node whose neighbors all coincide with it gets weight 1
/// on every edge.
pub fn build_knn_graph(x: &FeatureMatrix, ks: usize, a: f64) -> Result<KnnGraph, ClusterError> {
    let n = x.rows();
    if n < 2 {
        return Err(ClusterError::TooFewPoints { needed: 2, found: n });
    }
    if ks == 0 {
        return Err(ClusterError::BadParameter("neighbor count must be positive".into()));
    }
    if !(a.is_finite() && a > 0.0) {
        return Err(ClusterError::BadParameter(format!("scale factor {a} must be positive")));
    }
    let k = ks.min(n - 1);
    let rows: Vec<(Vec<usize>, Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut cand: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (squared_distance(xi, x.row(j)), j)).collect();
            let cmp = |p: &(f64, usize), q: &(f64, usize)| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, cmp);
                cand.truncate(k);
            }
            cand.sort_unstable_by(cmp);
            let sigma2 = cand.iter().map(|c| c.0).sum::<f64>() / k as f64;
            let w = cand
                .iter()
                .map(|&(d2, _)| if sigma2 > 0.0 { (-d2 / (a * sigma2)).exp().max(f64::MIN_POSITIVE) } else { 1.0 })
                .collect();
            (cand.into_iter().map(|c| c.1).collect(), w, sigma2)
        })
        .collect();

    let mut neighbors = Vec::with_capacity(n * k);
    let mut weights = Vec::with_capacity(n * k);
    let mut sigma2 = Vec::with_capacity(n);
    for (nb, w, s) in rows {
        neighbors.extend(nb);
        weights.extend(w);
        sigma2.push(s);
    }

    let mut in_start = vec![0usize; n + 1];
    for &j in &neighbors {
        in_start[j + 1] += 1;
    }
    for i in 0..n {
        in_start[i + 1] += in_start[i];
    }
    let mut fill = in_start.clone();
    let mut in_src = vec![0; n * k];
    let mut in_w = vec![0.0; n * k];
    // Sources visited in ascending order, so each in-list is sorted.
    for i in 0..n {
        for p in 0..k {
            let j = neighbors[i * k + p];
            in_src[fill[j]] = i;
            in_w[fill[j]] = weights[i * k + p];
            fill[j] += 1;
        }
    }
    Ok(KnnGraph { n, k, neighbors, weights, sigma2, in_start, in_src, in_w })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(n: usize, d: usize, v: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(n, d, v.to_vec()).unwrap()
    }

    #[test]
    fn two_points_are_mutual_neighbors() {
        let g = build_knn_graph(&fm(2, 2, &[0.0, 0.0, 3.0, 4.0]), 20, 2.0).unwrap();
        assert_eq!(g.k(), 1);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        let want = (-0.5f64).exp();
        assert!((g.weights(0)[0] - want).abs() < 1e-15);
        assert!((g.weights(1)[0] - want).abs() < 1e-15);
        assert_eq!(g.sigma2(0), 25.0);
    }

    #[test]
    fn identical_points_get_unit_weights() {
        let g = build_knn_graph(&fm(4, 3, &[1.5; 12]), 2, 1.0).unwrap();
        assert!(g.is_degenerate());
        assert!((0..4).all(|i| g.weights(i) == [1.0, 1.0]));
        // Equal distances resolve to the lowest indices.
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.neighbors(2), &[0, 1]);
    }

    #[test]
    fn in_edges_mirror_out_edges() {
        let v: Vec<f64> = (0..40).map(|i| ((i * 37) % 17) as f64 * 0.3).collect();
        let g = build_knn_graph(&fm(20, 2, &v), 3, 1.0).unwrap();
        for j in 0..20 {
            let (src, w) = g.in_edges(j);
            assert!(src.windows(2).all(|p| p[0] < p[1]));
            for (&i, &wij) in src.iter().zip(w) {
                assert_eq!(g.weight(i, j), wij);
            }
        }
        let total: usize = (0..20).map(|j| g.in_edges(j).0.len()).sum();
        assert_eq!(total, 60);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(build_knn_graph(&fm(1, 1, &[0.0]), 3, 1.0), Err(ClusterError::TooFewPoints { .. })));
        assert!(build_knn_graph(&fm(2, 1, &[0.0, 1.0]), 0, 1.0).is_err());
        assert!(build_knn_graph(&fm(2, 1, &[0.0, 1.0]), 1, 0.0).is_err());
    }
}
