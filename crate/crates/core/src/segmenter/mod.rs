//! Dense-grid segmentation with a trained network, the two intensity
//! baselines, and NMI evaluation against ground truth.

mod baselines;

pub use baselines::{baseline_intensity_kmeans, baseline_otsu, otsu_histogram, otsu_thresholds, OtsuHistogram};

use std::time::Instant;

use thiserror::Error;

use crate::cluster::{kmeans, nmi, ClusterError, FeatureMatrix, DEFAULT_MAX_ITERS};
use crate::net3d::{forward_features, NetError, NetParams, PATCH};
use crate::sampler::{dense_patch_grid, NormStats, SamplerError};
use crate::volume::{Dims, LabelMap, Volume, VolumeError, SENTINEL};

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("no foreground voxel at or above threshold {0}")]
    NoForeground(u16),
    #[error("network expects {expected}^3 patches, configuration asks for {found}^3")]
    WrongPatchSize { expected: usize, found: usize },
    #[error("voxel ({0}, {1}, {2}) covered by two subpatches")]
    OverlapDetected(usize, usize, usize),
    #[error("no voxel is labeled in both maps")]
    NoOverlap,
    #[error("invalid segmentation config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationConfig {
    pub w: usize,
    pub stride: usize,
    pub k: usize,
    pub threshold: u16,
    pub seed: u64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self { w: PATCH, stride: 5, k: 3, threshold: 0, seed: 0 }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        let bad = |m: String| Err(SegmentError::BadConfig(m));
        if self.w % 2 == 0 {
            return bad(format!("patch size {} must be odd", self.w));
        }
        if self.stride == 0 || self.stride > self.w {
            return bad(format!("stride {} must lie in 1..={}", self.stride, self.w));
        }
        if self.stride % 2 == 0 {
            return bad(format!("stride {} must be odd so subpatches are centered", self.stride));
        }
        if self.k < 2 {
            return bad(format!("K = {} must be at least 2", self.k));
        }
        if self.k >= usize::from(SENTINEL) {
            return bad(format!("K = {} does not fit the label range", self.k));
        }
        Ok(())
    }
}

/// Labels the `s^3` cube around each center with that center's label.
/// Everything else stays [`SENTINEL`]; cubes are clipped at the volume border.
pub fn project_labels(
    centers: &[[usize; 3]],
    labels: &[usize],
    s: usize,
    dims: Dims,
    spacing: [f32; 3],
    classes: u32,
) -> Result<LabelMap, SegmentError> {
    if centers.len() != labels.len() {
        return Err(SegmentError::BadConfig(format!("{} labels for {} centers", labels.len(), centers.len())));
    }
    if s % 2 == 0 {
        return Err(SegmentError::BadConfig(format!("subpatch size {s} must be odd")));
    }
    let half = s / 2;
    let mut map = LabelMap::unlabeled(dims, spacing, classes)?;
    let out = map.labels_mut();
    for (&[cx, cy, cz], &l) in centers.iter().zip(labels) {
        let label = u8::try_from(l).ok().filter(|&l| u32::from(l) < classes && l != SENTINEL).ok_or_else(|| {
            SegmentError::BadConfig(format!("label {l} out of range for {classes} classes"))
        })?;
        for z in cz.saturating_sub(half)..(cz + half + 1).min(dims.nz) {
            for y in cy.saturating_sub(half)..(cy + half + 1).min(dims.ny) {
                for x in cx.saturating_sub(half)..(cx + half + 1).min(dims.nx) {
                    let i = dims.index(x, y, z);
                    if out[i] != SENTINEL {
                        return Err(SegmentError::OverlapDetected(x, y, z));
                    }
                    out[i] = label;
                }
            }
        }
    }
    Ok(map)
}

/// Resets every voxel below `threshold` to [`SENTINEL`].
fn clear_background(map: &mut LabelMap, v: &Volume, threshold: u16) {
    for (l, &x) in map.labels_mut().iter_mut().zip(v.voxels()) {
        if x < threshold {
            *l = SENTINEL;
        }
    }
}

/// Renumbers k-means labels so clusters are ordered by first appearance.
fn first_seen_order(labels: &[usize], k: usize) -> Vec<usize> {
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub map: LabelMap,
    pub patches: usize,
    pub inertia: f64,
}

/// Dense lattice patches, network features, k-means with `K` clusters,
/// then subpatch projection. Background voxels stay unlabeled.
pub fn segment_volume(
    v: &Volume,
    params: &NetParams,
    stats: NormStats,
    cfg: &SegmentationConfig,
) -> Result<Segmentation, SegmentError> {
    cfg.validate()?;
    if cfg.w != PATCH {
        return Err(SegmentError::WrongPatchSize { expected: PATCH, found: cfg.w });
    }
    let grid = match dense_patch_grid(v, cfg.w, cfg.stride, cfg.threshold, stats) {
        Err(SamplerError::NoForeground(t)) => return Err(SegmentError::NoForeground(t)),
        r => r?,
    };
    let x = FeatureMatrix::from_matrix(&forward_features(params, &grid)?)?;
    if x.rows() < cfg.k {
        return Err(ClusterError::TooFewPoints { needed: cfg.k, found: x.rows() }.into());
    }
    let km = kmeans(&x, cfg.k, cfg.seed, DEFAULT_MAX_ITERS)?;
    let labels = first_seen_order(&km.labels, cfg.k);
    let mut map = project_labels(grid.centers(), &labels, cfg.stride, v.dims(), v.spacing(), cfg.k as u32)?;
    clear_background(&mut map, v, cfg.threshold);
    Ok(Segmentation { map, patches: grid.len(), inertia: km.inertia })
}

/// `count` evenly spaced z-planes strictly inside `0..nz`.
pub fn evaluation_slices(nz: usize, count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=count).map(|i| (i * nz) / (count + 1)).filter(|&z| z < nz).collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmiScore {
    pub nmi: f64,
    pub voxels: usize,
}

/// NMI over voxels labeled in both maps, restricted to `slices` (all when empty).
pub fn evaluate_nmi(predicted: &LabelMap, truth: &LabelMap, slices: &[usize]) -> Result<NmiScore, SegmentError> {
    let dims = predicted.dims();
    if truth.dims() != dims {
        return Err(VolumeError::DimsMismatch(dims, truth.dims()).into());
    }
    let plane = dims.nx * dims.ny;
    let ranges: Vec<std::ops::Range<usize>> = if slices.is_empty() {
        vec![0..dims.len()]
    } else {
        let mut zs = slices.to_vec();
        zs.sort_unstable();
        zs.dedup();
        if let Some(&z) = zs.iter().find(|&&z| z >= dims.nz) {
            return Err(SegmentError::BadConfig(format!("slice {z} outside 0..{}", dims.nz)));
        }
        zs.into_iter().map(|z| z * plane..(z + 1) * plane).collect()
    };
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for r in ranges {
        for (&p, &t) in predicted.labels()[r.clone()].iter().zip(&truth.labels()[r]) {
            if p != SENTINEL && t != SENTINEL {
                a.push(p);
                b.push(t);
            }
        }
    }
    if a.is_empty() {
        return Err(SegmentError::NoOverlap);
    }
    Ok(NmiScore { nmi: nmi(&a, &b)?, voxels: a.len() })
}

/// One row of the metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodMetrics {
    pub method: String,
    pub k: usize,
    pub nmi: f64,
    pub evaluated_voxels: usize,
    /// Evaluated z-planes; empty means the whole volume.
    pub slices: Vec<usize>,
    pub seed: u64,
    pub runtime_s: f64,
}

/// Scores `predicted` both on `slices` and on the full volume.
pub fn score_method(
    method: &str,
    k: usize,
    predicted: &LabelMap,
    truth: &LabelMap,
    slices: &[usize],
    seed: u64,
    started: Instant,
) -> Result<[MethodMetrics; 2], SegmentError> {
    let runtime_s = started.elapsed().as_secs_f64();
    let row = |s: &[usize]| -> Result<MethodMetrics, SegmentError> {
        let score = evaluate_nmi(predicted, truth, s)?;
        Ok(MethodMetrics {
            method: method.to_string(),
            k,
            nmi: score.nmi,
            evaluated_voxels: score.voxels,
            slices: s.to_vec(),
            seed,
            runtime_s,
        })
    };
    Ok([row(slices)?, row(&[])?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_center_labels_its_cube() {
        let dims = Dims::cube(11);
        let map = project_labels(&[[5, 5, 5]], &[1], 5, dims, [1.0; 3], 3).unwrap();
        assert_eq!(map.labeled_count(), 125);
        for z in 0..11 {
            for y in 0..11 {
                for x in 0..11 {
                    let inside = [x, y, z].iter().all(|&c| (3..=7).contains(&c));
                    assert_eq!(map.get(x, y, z) == 1, inside);
                }
            }
        }
    }

    #[test]
    fn adjacent_centers_do_not_overlap() {
        let dims = Dims::cube(20);
        let map = project_labels(&[[5, 5, 5], [10, 5, 5]], &[0, 1], 5, dims, [1.0; 3], 2).unwrap();
        assert_eq!(map.labeled_count(), 250);
        let err = project_labels(&[[5, 5, 5], [9, 5, 5]], &[0, 1], 5, dims, [1.0; 3], 2).unwrap_err();
        assert!(matches!(err, SegmentError::OverlapDetected(7, 3, 3)));
    }

    #[test]
    fn slices_are_evenly_spaced() {
        assert_eq!(evaluation_slices(96, 7), vec![12, 24, 36, 48, 60, 72, 84]);
        assert_eq!(evaluation_slices(3, 7), vec![0, 1, 2]);
    }

    #[test]
    fn evaluation_uses_the_intersection() {
        let dims = Dims::new(2, 2, 2);
        let s = SENTINEL;
        let pred = LabelMap::new(dims, [1.0; 3], 2, vec![0, 0, 1, 1, s, 0, 1, 1]).unwrap();
        let truth = LabelMap::new(dims, [1.0; 3], 2, vec![1, 1, 0, s, 0, 1, 0, 0]).unwrap();
        let all = evaluate_nmi(&pred, &truth, &[]).unwrap();
        assert_eq!(all.voxels, 6);
        assert!((all.nmi - 1.0).abs() < 1e-12);
        assert_eq!(evaluate_nmi(&pred, &truth, &[1]).unwrap().voxels, 3);
        let empty = LabelMap::unlabeled(dims, [1.0; 3], 2).unwrap();
        assert!(matches!(evaluate_nmi(&empty, &truth, &[]), Err(SegmentError::NoOverlap)));
    }

    #[test]
    fn config_rules() {
        let ok = SegmentationConfig::default();
        ok.validate().unwrap();
        assert!(SegmentationConfig { k: 1, ..ok }.validate().is_err());
        assert!(SegmentationConfig { stride: 0, ..ok }.validate().is_err());
        assert!(SegmentationConfig { stride: 29, ..ok }.validate().is_err());
        assert!(SegmentationConfig { w: 26, ..ok }.validate().is_err());
    }
}
