//! Training-patch sampling, dense inference grids and global intensity centralization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::volume::{Dims, Volume};

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("patch size {0} must be odd and at least 1")]
    EvenPatchSize(usize),
    #[error("volume {dims:?} is smaller than the patch size {w} along some axis")]
    VolumeTooSmall { dims: Dims, w: usize },
    #[error("no admissible patch center at or above threshold {0}")]
    NoForeground(u16),
    #[error("stride {s} must be within 1..={w}")]
    BadStride { s: usize, w: usize },
    #[error("requested zero patches")]
    ZeroCount,
    #[error("normalization stddev must be positive and finite, got {0}")]
    BadStats(f64),
}

/// Global centralization statistics shared by training and inference patches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    /// Set when the raw intensities had (numerically) zero spread and `std` fell back to 1.
    pub degenerate: bool,
}

impl NormStats {
    pub const STD_FLOOR: f64 = 1e-12;

    pub fn new(mean: f64, std: f64) -> Result<Self, SamplerError> {
        if !(std.is_finite() && std > 0.0) || !mean.is_finite() {
            return Err(SamplerError::BadStats(std));
        }
        Ok(Self { mean, std, degenerate: false })
    }
}

/// A batch of cubic patches, each stored x-fastest, with their source centers.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    w: usize,
    data: Vec<f32>,
    centers: Vec<[usize; 3]>,
    norm: Option<NormStats>,
    stride: usize,
}

impl PatchSet {
    /// Builds a set from already-extracted patch data.
    pub fn from_raw(w: usize, data: Vec<f32>, centers: Vec<[usize; 3]>) -> Self {
        assert_eq!(data.len(), centers.len() * w * w * w, "patch data length");
        Self { w, data, centers, norm: None, stride: 0 }
    }

    pub fn patch_size(&self) -> usize {
        self.w
    }

    pub fn patch_len(&self) -> usize {
        self.w * self.w * self.w
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        let n = self.patch_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn centers(&self) -> &[[usize; 3]] {
        &self.centers
    }

    /// Statistics the patches were centralized with; `None` for raw patches.
    pub fn norm_stats(&self) -> Option<NormStats> {
        self.norm
    }

    /// Lattice pitch for dense grids, 0 for randomly sampled sets.
    pub fn grid_stride(&self) -> usize {
        self.stride
    }
}

fn check_geometry(dims: Dims, w: usize) -> Result<(), SamplerError> {
    if w % 2 == 0 {
        return Err(SamplerError::EvenPatchSize(w));
    }
    if dims.as_array().iter().any(|&n| n < w) {
        return Err(SamplerError::VolumeTooSmall { dims, w });
    }
    Ok(())
}

#[inline]
fn admissible(dims: Dims, half: usize, [x, y, z]: [usize; 3]) -> bool {
    x >= half && y >= half && z >= half && x + half < dims.nx && y + half < dims.ny && z + half < dims.nz
}

fn extract(v: &Volume, w: usize, [cx, cy, cz]: [usize; 3], out: &mut Vec<f32>) {
    let half = w / 2;
    let dims = v.dims();
    let vox = v.voxels();
    for z in cz - half..=cz + half {
        for y in cy - half..=cy + half {
            let row = dims.index(cx - half, y, z);
            out.extend(vox[row..row + w].iter().map(|&x| f32::from(x)));
        }
    }
}

/// Draws `count` patch centers uniformly (with replacement) among voxels at or
/// above `threshold` whose w-cube lies fully inside the volume.
pub fn sample_training_patches(
    v: &Volume,
    count: usize,
    w: usize,
    threshold: u16,
    seed: u64,
) -> Result<PatchSet, SamplerError> {
    let dims = v.dims();
    check_geometry(dims, w)?;
    if count == 0 {
        return Err(SamplerError::ZeroCount);
    }
    let half = w / 2;
    let is_admissible =
        |i: usize| v.voxels()[i] >= threshold && admissible(dims, half, dims.coords(i));
    let total = (0..dims.len()).filter(|&i| is_admissible(i)).count();
    if total == 0 {
        return Err(SamplerError::NoForeground(threshold));
    }

    // Draw ranks into the admissible list, then resolve them in one scan.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<(usize, usize)> = (0..count).map(|k| (rng.gen_range(0..total), k)).collect();
    draws.sort_unstable();
    let mut centers = vec![[0; 3]; count];
    let mut next = 0;
    let mut rank = 0;
    for i in 0..dims.len() {
        if next == draws.len() {
            break;
        }
        if !is_admissible(i) {
            continue;
        }
        while next < draws.len() && draws[next].0 == rank {
            centers[draws[next].1] = dims.coords(i);
            next += 1;
        }
        rank += 1;
    }

    let mut data = Vec::with_capacity(count * w * w * w);
    for &c in &centers {
        extract(v, w, c, &mut data);
    }
    Ok(PatchSet::from_raw(w, data, centers))
}

/// Centralizes all patches with the mean and standard deviation of every
/// voxel of every patch in the set.
pub fn normalize_patches(p: &PatchSet) -> (PatchSet, NormStats) {
    let n = p.data.len() as f64;
    let mean = p.data.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let var = p.data.iter().map(|&x| (f64::from(x) - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let stats = if std < NormStats::STD_FLOOR {
        NormStats { mean, std: 1.0, degenerate: true }
    } else {
        NormStats { mean, std, degenerate: false }
    };
    (apply_stats(p, stats), stats)
}

/// Applies previously computed statistics without recomputing them.
pub fn apply_stats(p: &PatchSet, stats: NormStats) -> PatchSet {
    let data = p
        .data
        .iter()
        .map(|&x| ((f64::from(x) - stats.mean) / stats.std) as f32)
        .collect();
    PatchSet { data, norm: Some(stats), ..p.clone_meta() }
}

impl PatchSet {
    fn clone_meta(&self) -> Self {
        Self {
            w: self.w,
            data: Vec::new(),
            centers: self.centers.clone(),
            norm: self.norm,
            stride: self.stride,
        }
    }
}

/// Lattice coordinates along one axis: `half, half + s, ...` while the patch fits.
pub fn lattice_axis(n: usize, w: usize, s: usize) -> Vec<usize> {
    let half = w / 2;
    if n < w {
        return Vec::new();
    }
    (half..n - half).step_by(s).collect()
}

/// Extracts every lattice patch whose center is foreground, centralized with `stats`.
/// Centers are ordered z-major (z slowest, x fastest).
pub fn dense_patch_grid(
    v: &Volume,
    w: usize,
    s: usize,
    threshold: u16,
    stats: NormStats,
) -> Result<PatchSet, SamplerError> {
    let dims = v.dims();
    check_geometry(dims, w)?;
    if s == 0 || s > w {
        return Err(SamplerError::BadStride { s, w });
    }
    if !(stats.std.is_finite() && stats.std > 0.0) {
        return Err(SamplerError::BadStats(stats.std));
    }
    let (xs, ys, zs) = (lattice_axis(dims.nx, w, s), lattice_axis(dims.ny, w, s), lattice_axis(dims.nz, w, s));
    let mut centers = Vec::new();
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                if v.get(x, y, z) >= threshold {
                    centers.push([x, y, z]);
                }
            }
        }
    }
    if centers.is_empty() {
        return Err(SamplerError::NoForeground(threshold));
    }
    let mut data = Vec::with_capacity(centers.len() * w * w * w);
    for &c in &centers {
        extract(v, w, c, &mut data);
    }
    let raw = PatchSet { w, data, centers, norm: None, stride: s };
    Ok(apply_stats(&raw, stats))
}
