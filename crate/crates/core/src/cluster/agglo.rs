use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use super::{build_knn_graph, ClusterError, ClusterPartition, FeatureMatrix, KnnGraph};

/// Half of the linkage: `sum_{i in a} indeg_b(i) * outdeg_b(i) / |a|^2`,
/// where `in_b(j)` decides membership in `b`.
fn one_sided(g: &KnnGraph, a: &[usize], in_b: impl Fn(usize) -> bool) -> f64 {
    let mut total = 0.0;
    for &i in a {
        let (src, w) = g.in_edges(i);
        let indeg: f64 = src.iter().zip(w).filter(|(&s, _)| in_b(s)).map(|(_, &w)| w).sum();
        if indeg == 0.0 {
            continue;
        }
        let outdeg: f64 =
            g.neighbors(i).iter().zip(g.weights(i)).filter(|(&j, _)| in_b(j)).map(|(_, &w)| w).sum();
        total += indeg * outdeg;
    }
    let s = a.len() as f64;
    total / (s * s)
}

/// Graph-degree-linkage affinity between disjoint, nonempty clusters.
///
/// Members are taken in ascending order, so the value depends only on
/// the two member sets.
pub fn gdl_affinity(g: &KnnGraph, a: &[usize], b: &[usize]) -> Result<f64, ClusterError> {
    if a.is_empty() || b.is_empty() {
        return Err(ClusterError::BadPartition("affinity of an empty cluster".into()));
    }
    let mut owner = vec![0u8; g.len()];
    for &i in a {
        owner[i] |= 1;
    }
    for &j in b {
        if owner[j] & 1 != 0 {
            return Err(ClusterError::OverlappingClusters(a[0], b[0]));
        }
        owner[j] |= 2;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok(one_sided(g, &a, |j| owner[j] & 2 != 0) + one_sided(g, &b, |j| owner[j] & 1 != 0))
}

#[derive(Debug)]
struct Candidate {
    affinity: f64,
    a: usize,
    b: usize,
    va: u32,
    vb: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // Max-heap order: larger affinity first, then the lexicographically lower pair.
    fn cmp(&self, other: &Self) -> Ordering {
        self.affinity
            .total_cmp(&other.affinity)
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
    }
}

/// Clusters keyed by their smallest member.
struct State<'g> {
    g: &'g KnnGraph,
    id: Vec<usize>,
    members: Vec<Vec<usize>>,
    version: Vec<u32>,
    alive: BTreeSet<usize>,
    heap: BinaryHeap<Candidate>,
    mark: Vec<usize>,
    stamp: usize,
}

impl<'g> State<'g> {
    fn new(g: &'g KnnGraph, init: &ClusterPartition) -> Self {
        let n = g.len();
        let mut id = vec![0; n];
        let mut members = vec![Vec::new(); n];
        let mut alive = BTreeSet::new();
        for c in 0..init.clusters() {
            let mem = init.members(c);
            let key = mem[0];
            for &i in mem {
                id[i] = key;
            }
            members[key] = mem.to_vec();
            alive.insert(key);
        }
        Self { g, id, members, version: vec![0; n], alive, heap: BinaryHeap::new(), mark: vec![0; n], stamp: 0 }
    }

    fn affinity(&self, a: usize, b: usize) -> f64 {
        let id = &self.id;
        one_sided(self.g, &self.members[a], |j| id[j] == b) + one_sided(self.g, &self.members[b], |j| id[j] == a)
    }

    /// Clusters joined to `c` by an edge in either direction, ascending.
    fn adjacent(&mut self, c: usize) -> Vec<usize> {
        self.stamp += 1;
        let mut out = Vec::new();
        for &i in &self.members[c] {
            let (src, _) = self.g.in_edges(i);
            for &j in self.g.neighbors(i).iter().chain(src) {
                let d = self.id[j];
                if d != c && self.mark[d] != self.stamp {
                    self.mark[d] = self.stamp;
                    out.push(d);
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn push(&mut self, x: usize, y: usize) {
        let (a, b) = (x.min(y), x.max(y));
        let affinity = self.affinity(a, b);
        if affinity > 0.0 {
            self.heap.push(Candidate { affinity, a, b, va: self.version[a], vb: self.version[b] });
        }
    }

    fn seed(&mut self) {
        let keys: Vec<usize> = self.alive.iter().copied().collect();
        for a in keys {
            for b in self.adjacent(a) {
                if b > a {
                    self.push(a, b);
                }
            }
        }
    }

    fn best_pair(&mut self) -> (usize, usize) {
        while let Some(c) = self.heap.pop() {
            let live = self.alive.contains(&c.a) && self.alive.contains(&c.b);
            if live && self.version[c.a] == c.va && self.version[c.b] == c.vb {
                return (c.a, c.b);
            }
        }
        // Every remaining pair has affinity 0: the tie rule picks the two lowest clusters.
        let mut it = self.alive.iter();
        (*it.next().unwrap(), *it.next().unwrap())
    }

    fn merge(&mut self, a: usize, b: usize) {
        let moved = std::mem::take(&mut self.members[b]);
        for &i in &moved {
            self.id[i] = a;
        }
        let kept = std::mem::take(&mut self.members[a]);
        let mut merged = Vec::with_capacity(kept.len() + moved.len());
        let (mut p, mut q) = (0, 0);
        while p < kept.len() || q < moved.len() {
            if q == moved.len() || (p < kept.len() && kept[p] < moved[q]) {
                merged.push(kept[p]);
                p += 1;
            } else {
                merged.push(moved[q]);
                q += 1;
            }
        }
        self.members[a] = merged;
        self.alive.remove(&b);
        self.version[a] += 1;
        for c in self.adjacent(a) {
            self.push(a, c);
        }
    }
}

/// Greedy GDL merging on `g`, starting from `init`, until `target` clusters remain.
///
/// Each step merges the pair of maximal affinity, ties going to the pair
/// with the lowest indices; when no pair has positive affinity the two
/// lowest-indexed clusters merge.
pub fn agglomerate_graph(
    g: &KnnGraph,
    init: &ClusterPartition,
    target: usize,
) -> Result<ClusterPartition, ClusterError> {
    if init.len() != g.len() {
        return Err(ClusterError::BadPartition(format!("{} labels for a {}-node graph", init.len(), g.len())));
    }
    let current = init.clusters();
    if target == 0 || target > current {
        return Err(ClusterError::BadTarget { target, current });
    }
    if target == current {
        return Ok(init.clone());
    }
    let mut st = State::new(g, init);
    st.seed();
    while st.alive.len() > target {
        let (a, b) = st.best_pair();
        st.merge(a, b);
    }
    ClusterPartition::from_labels(&st.id)
}

/// Agglomerates `x` from singletons down to `target` clusters.
pub fn agglomerate(x: &FeatureMatrix, target: usize, ks: usize, a: f64) -> Result<ClusterPartition, ClusterError> {
    let n = x.rows();
    if target == 0 || target > n {
        return Err(ClusterError::BadTarget { target, current: n });
    }
    if target == n {
        return Ok(ClusterPartition::singletons(n));
    }
    let g = build_knn_graph(x, ks, a)?;
    agglomerate_graph(&g, &ClusterPartition::singletons(n), target)
}
