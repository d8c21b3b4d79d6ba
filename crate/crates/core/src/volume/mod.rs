//! Volumes, label maps, foreground masks and synthetic phantoms.
//!
//! Voxels are stored in a flat array with x varying fastest, then y, then z.

mod io;
mod phantom;

pub use io::{load_labelmap, load_volume, save_labelmap, save_volume, HEADER_LEN, MAGIC};
pub use phantom::{generate_phantom, PhantomLayout, PhantomSpec};

use thiserror::Error;

/// Label value marking voxels that carry no class (background or uncovered).
pub const SENTINEL: u8 = 255;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("bad magic bytes {0:?}, expected \"VOL3\"")]
    BadMagic([u8; 4]),
    #[error("dtype code {found} does not match expected {expected}")]
    WrongDtype { expected: u8, found: u8 },
    #[error("header truncated: {found} of {expected} bytes")]
    TruncatedHeader { expected: usize, found: usize },
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(u64),
    #[error("zero-sized dimension in {0:?}")]
    ZeroDim([u32; 3]),
    #[error("spacing must be positive and finite, got {0:?}")]
    BadSpacing([f32; 3]),
    #[error("voxel count {found} does not match dims product {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("label {label} is not below the declared class count {classes}")]
    RejectedInvalidLabel { label: u8, classes: u32 },
    #[error("dims {0:?} and {1:?} differ")]
    DimsMismatch(Dims, Dims),
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

/// Grid extent in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    /// Inverse of [`Dims::index`].
    #[inline]
    pub const fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.nx;
        let r = i / self.nx;
        [x, r % self.ny, r / self.ny]
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    fn check_nonzero(&self) -> Result<(), VolumeError> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(VolumeError::ZeroDim([self.nx as u32, self.ny as u32, self.nz as u32]));
        }
        Ok(())
    }
}

/// 16-bit intensity volume with physical voxel spacing in micrometers.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f32; 3],
    voxels: Vec<u16>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: [f32; 3], voxels: Vec<u16>) -> Result<Self, VolumeError> {
        dims.check_nonzero()?;
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(VolumeError::BadSpacing(spacing));
        }
        if voxels.len() != dims.len() {
            return Err(VolumeError::SizeMismatch { expected: dims.len(), found: voxels.len() });
        }
        Ok(Self { dims, spacing, voxels })
    }

    /// Volume filled with a single intensity and unit spacing.
    pub fn filled(dims: Dims, value: u16) -> Result<Self, VolumeError> {
        Self::new(dims, [1.0; 3], vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[u16] {
        &self.voxels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.voxels[self.dims.index(x, y, z)]
    }
}

/// Per-voxel class labels aligned with a [`Volume`]; [`SENTINEL`] marks unlabeled voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    dims: Dims,
    spacing: [f32; 3],
    classes: u32,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(
        dims: Dims,
        spacing: [f32; 3],
        classes: u32,
        labels: Vec<u8>,
    ) -> Result<Self, VolumeError> {
        dims.check_nonzero()?;
        if labels.len() != dims.len() {
            return Err(VolumeError::SizeMismatch { expected: dims.len(), found: labels.len() });
        }
        let map = Self { dims, spacing, classes, labels };
        map.validate()?;
        Ok(map)
    }

    /// All-sentinel map.
    pub fn unlabeled(dims: Dims, spacing: [f32; 3], classes: u32) -> Result<Self, VolumeError> {
        Self::new(dims, spacing, classes, vec![SENTINEL; dims.len()])
    }

    /// Checks that every non-sentinel label is below the class count.
    pub fn validate(&self) -> Result<(), VolumeError> {
        match self
            .labels
            .iter()
            .find(|&&l| l != SENTINEL && u32::from(l) >= self.classes)
        {
            Some(&label) => Err(VolumeError::RejectedInvalidLabel { label, classes: self.classes }),
            None => Ok(()),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn classes(&self) -> u32 {
        self.classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Mutable access to the raw labels. Invariants are re-checked on save.
    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.dims.index(x, y, z)]
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != SENTINEL).count()
    }
}

/// Boolean foreground mask with its population count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub dims: Dims,
    pub bits: Vec<bool>,
    pub count: usize,
}

/// Foreground is every voxel with intensity at or above `threshold`.
pub fn foreground_mask(v: &Volume, threshold: u16) -> Mask {
    let bits: Vec<bool> = v.voxels.iter().map(|&x| x >= threshold).collect();
    let count = bits.iter().filter(|&&b| b).count();
    Mask { dims: v.dims, bits, count }
}
