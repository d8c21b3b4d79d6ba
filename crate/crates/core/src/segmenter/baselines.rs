use crate::cluster::{kmeans, FeatureMatrix, DEFAULT_MAX_ITERS};
use crate::volume::{LabelMap, Volume};

use super::SegmentError;

fn foreground(v: &Volume, threshold: u16) -> Result<Vec<usize>, SegmentError> {
    let idx: Vec<usize> = (0..v.voxels().len()).filter(|&i| v.voxels()[i] >= threshold).collect();
    if idx.is_empty() {
        return Err(SegmentError::NoForeground(threshold));
    }
    Ok(idx)
}

fn label_map(v: &Volume, idx: &[usize], labels: impl Iterator<Item = u8>, classes: u32) -> Result<LabelMap, SegmentError> {
    let mut map = LabelMap::unlabeled(v.dims(), v.spacing(), classes)?;
    let out = map.labels_mut();
    for (&i, l) in idx.iter().zip(labels) {
        out[i] = l;
    }
    Ok(map)
}

/// k-means on raw foreground intensities; labels sorted by centroid intensity.
pub fn baseline_intensity_kmeans(v: &Volume, k: usize, threshold: u16, seed: u64) -> Result<LabelMap, SegmentError> {
    if k == 0 || k >= usize::from(crate::volume::SENTINEL) {
        return Err(SegmentError::BadConfig(format!("K = {k} out of range")));
    }
    let idx = foreground(v, threshold)?;
    let values: Vec<f64> = idx.iter().map(|&i| f64::from(v.voxels()[i])).collect();
    let km = kmeans(&FeatureMatrix::from_scalars(&values)?, k, seed, DEFAULT_MAX_ITERS)?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| km.centroid(a)[0].total_cmp(&km.centroid(b)[0]).then(a.cmp(&b)));
    let mut rank = vec![0u8; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r as u8;
    }
    label_map(v, &idx, km.labels.iter().map(|&l| rank[l]), k as u32)
}

/// Foreground histogram with uniform bins over the foreground range.
#[derive(Debug, Clone, PartialEq)]
pub struct OtsuHistogram {
    pub counts: Vec<u64>,
    pub min: f64,
    pub max: f64,
}

impl OtsuHistogram {
    pub fn bin(&self, value: f64) -> usize {
        let bins = self.counts.len();
        if self.max <= self.min {
            return 0;
        }
        (((value - self.min) / (self.max - self.min) * bins as f64) as usize).min(bins - 1)
    }
}

pub fn otsu_histogram(values: &[f64], bins: usize) -> OtsuHistogram {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut h = OtsuHistogram { counts: vec![0; bins], min, max };
    for &x in values {
        let b = h.bin(x);
        h.counts[b] += 1;
    }
    h
}

/// Exhaustive multilevel Otsu on a histogram: returns `levels` bin indices
/// `t1 < t2 ...`, class `c` holding bins `t_c..t_{c+1}`. Maximizes the
/// between-class variance; ties go to the lexicographically lowest thresholds.
pub fn otsu_thresholds(counts: &[u64], levels: usize) -> Vec<usize> {
    let bins = counts.len();
    assert!((1..=2).contains(&levels) && bins > levels, "otsu: unsupported levels or too few bins");
    let mut pc = vec![0u64; bins + 1];
    let mut ps = vec![0u64; bins + 1];
    for (b, &c) in counts.iter().enumerate() {
        pc[b + 1] = pc[b] + c;
        ps[b + 1] = ps[b] + c * b as u64;
    }
    // Between-class variance up to terms independent of the thresholds.
    let term = |lo: usize, hi: usize| -> f64 {
        let n = pc[hi] - pc[lo];
        if n == 0 {
            0.0
        } else {
            let s = (ps[hi] - ps[lo]) as f64;
            s * s / n as f64
        }
    };
    let mut best = (f64::NEG_INFINITY, vec![]);
    if levels == 1 {
        for t in 1..bins {
            let v = term(0, t) + term(t, bins);
            if v > best.0 {
                best = (v, vec![t]);
            }
        }
    } else {
        for t1 in 1..bins - 1 {
            for t2 in t1 + 1..bins {
                let v = term(0, t1) + term(t1, t2) + term(t2, bins);
                if v > best.0 {
                    best = (v, vec![t1, t2]);
                }
            }
        }
    }
    best.1
}

pub const OTSU_BINS: usize = 256;

/// Multilevel Otsu on a 256-bin foreground histogram. Labels follow
/// intensity order; a constant foreground is a single class.
pub fn baseline_otsu(v: &Volume, levels: usize, threshold: u16) -> Result<LabelMap, SegmentError> {
    if !(1..=2).contains(&levels) {
        return Err(SegmentError::BadConfig(format!("Otsu levels {levels} must be 1 or 2")));
    }
    let idx = foreground(v, threshold)?;
    let values: Vec<f64> = idx.iter().map(|&i| f64::from(v.voxels()[i])).collect();
    let hist = otsu_histogram(&values, OTSU_BINS);
    let classes = levels as u32 + 1;
    if hist.max <= hist.min {
        return label_map(v, &idx, std::iter::repeat(0), classes);
    }
    let t = otsu_thresholds(&hist.counts, levels);
    let labels = values.iter().map(|&x| {
        let b = hist.bin(x);
        t.iter().filter(|&&t| b >= t).count() as u8
    });
    label_map(v, &idx, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::nmi;
    use crate::volume::{Dims, SENTINEL};

    fn volume(values: &[u16]) -> Volume {
        Volume::new(Dims::new(values.len(), 1, 1), [1.0; 3], values.to_vec()).unwrap()
    }

    #[test]
    fn otsu_splits_two_modes() {
        let v = volume(&[1000, 9000, 1000, 9000, 1000, 9000, 1000, 9000, 0]);
        let map = baseline_otsu(&v, 1, 500).unwrap();
        assert_eq!(map.labels(), &[0, 1, 0, 1, 0, 1, 0, 1, SENTINEL]);
    }

    #[test]
    fn otsu_recovers_three_modes() {
        let mut vals = Vec::new();
        for m in [1000u16, 5000, 9000] {
            vals.extend([m - 20, m, m + 20, m + 5]);
        }
        let map = baseline_otsu(&volume(&vals), 2, 0).unwrap();
        let want: Vec<u8> = (0..12).map(|i| (i / 4) as u8).collect();
        assert_eq!(map.labels(), &want[..]);
    }

    #[test]
    fn constant_foreground_is_one_class() {
        for levels in [1, 2] {
            let map = baseline_otsu(&volume(&[7, 7, 7, 0]), levels, 1).unwrap();
            assert_eq!(map.labels(), &[0, 0, 0, SENTINEL]);
        }
    }

    #[test]
    fn kmeans_baseline_orders_by_intensity() {
        let v = volume(&[9000, 100, 5000, 9010, 110, 5020, 3]);
        let map = baseline_intensity_kmeans(&v, 3, 50, 0).unwrap();
        assert_eq!(map.labels(), &[2, 0, 1, 2, 0, 1, SENTINEL]);
        let one = baseline_intensity_kmeans(&v, 1, 50, 0).unwrap();
        assert_eq!(&one.labels()[..6], &[0; 6]);
        let truth = [2u8, 0, 1, 2, 0, 1];
        assert_eq!(nmi(&map.labels()[..6], &truth).unwrap(), 1.0);
    }

    #[test]
    fn empty_foreground() {
        let v = volume(&[1, 2]);
        assert!(matches!(baseline_otsu(&v, 1, 10), Err(SegmentError::NoForeground(10))));
        assert!(matches!(baseline_intensity_kmeans(&v, 2, 10, 0), Err(SegmentError::NoForeground(10))));
    }
}
