//! Three-class synthetic phantoms with known ground truth.
//!
//! Each class has its own mean intensity and noise level. Noise is i.i.d.
//! standard normal per voxel, box-smoothed and rescaled to unit variance, so
//! the class standard deviation in the output matches the requested one while
//! the texture gains a spatial correlation length of about the box width.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dims, LabelMap, Volume, VolumeError};

pub const PHANTOM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomLayout {
    /// Three equal slabs stacked along z; class = slab index.
    Slabs,
    /// Concentric spheres: class 1 core, class 0 shell, class 2 outside.
    Blobs,
}

impl std::str::FromStr for PhantomLayout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slabs" => Ok(Self::Slabs),
            "blobs" => Ok(Self::Blobs),
            other => Err(format!("unknown phantom layout {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub spacing: [f32; 3],
    pub layout: PhantomLayout,
    pub means: [f64; PHANTOM_CLASSES],
    pub sigmas: [f64; PHANTOM_CLASSES],
    pub smoothing_radius: usize,
    pub seed: u64,
}

impl PhantomSpec {
    /// Bright/quiet, bright/noisy and dark/quiet classes: the first two are
    /// indistinguishable by mean intensity alone.
    pub fn three_slab(n: usize, seed: u64) -> Self {
        Self {
            dims: Dims::cube(n),
            spacing: [27.1; 3],
            layout: PhantomLayout::Slabs,
            means: [12000.0, 12000.0, 5000.0],
            sigmas: [300.0, 2500.0, 300.0],
            smoothing_radius: 1,
            seed,
        }
    }

    fn validate(&self) -> Result<(), VolumeError> {
        self.dims.check_nonzero()?;
        for (c, (&m, &s)) in self.means.iter().zip(&self.sigmas).enumerate() {
            if !(m.is_finite() && s.is_finite()) || m < 0.0 || s < 0.0 {
                return Err(VolumeError::InvalidSpec(format!(
                    "class {c}: mean {m} and sigma {s} must be finite and nonnegative"
                )));
            }
            if m > f64::from(u16::MAX) {
                return Err(VolumeError::InvalidSpec(format!(
                    "class {c}: mean {m} exceeds the 16-bit range"
                )));
            }
        }
        if self.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(VolumeError::BadSpacing(self.spacing));
        }
        Ok(())
    }

    /// Ground-truth class at a voxel.
    pub fn class_at(&self, x: usize, y: usize, z: usize) -> u8 {
        let d = self.dims;
        match self.layout {
            PhantomLayout::Slabs => ((z * PHANTOM_CLASSES) / d.nz).min(PHANTOM_CLASSES - 1) as u8,
            PhantomLayout::Blobs => {
                let centre = |i: usize, n: usize| i as f64 + 0.5 - n as f64 / 2.0;
                let (cx, cy, cz) = (centre(x, d.nx), centre(y, d.ny), centre(z, d.nz));
                let half = d.nx.min(d.ny).min(d.nz) as f64 / 2.0;
                let r = (cx * cx + cy * cy + cz * cz).sqrt() / half;
                if r < 0.4 {
                    1
                } else if r < 0.8 {
                    0
                } else {
                    2
                }
            }
        }
    }
}

/// Generates the phantom volume and its exact ground-truth label map.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume, LabelMap), VolumeError> {
    spec.validate()?;
    let dims = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let white: Vec<f64> = (0..dims.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let noise = smooth_unit_variance(&white, dims, spec.smoothing_radius);

    let mut labels = Vec::with_capacity(dims.len());
    let mut voxels = Vec::with_capacity(dims.len());
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let c = spec.class_at(x, y, z);
                let i = dims.index(x, y, z);
                let value = spec.means[c as usize] + spec.sigmas[c as usize] * noise[i];
                labels.push(c);
                voxels.push(value.round().clamp(0.0, f64::from(u16::MAX)) as u16);
            }
        }
    }
    let volume = Volume::new(dims, spec.spacing, voxels)?;
    let truth = LabelMap::new(dims, spec.spacing, PHANTOM_CLASSES as u32, labels)?;
    Ok((volume, truth))
}

/// Box sum over a (2r+1)^3 window clipped at the borders, divided by the
/// square root of the window population. For i.i.d. unit-variance input the
/// output has unit variance everywhere.
fn smooth_unit_variance(input: &[f64], dims: Dims, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return input.to_vec();
    }
    let mut buf = input.to_vec();
    let mut counts = vec![1.0f64; dims.len()];
    let n = dims.as_array();
    let strides = [1, dims.nx, dims.nx * dims.ny];
    for axis in 0..3 {
        let len = n[axis];
        let stride = strides[axis];
        let mut line = vec![0.0; len];
        let mut prefix = vec![0.0; len + 1];
        for start in 0..dims.len() {
            // visit each line once, from its first element
            if (start / stride) % len != 0 {
                continue;
            }
            for (k, v) in line.iter_mut().enumerate() {
                *v = buf[start + k * stride];
            }
            for k in 0..len {
                prefix[k + 1] = prefix[k] + line[k];
            }
            for k in 0..len {
                let lo = k.saturating_sub(radius);
                let hi = (k + radius + 1).min(len);
                buf[start + k * stride] = prefix[hi] - prefix[lo];
                counts[start + k * stride] *= (hi - lo) as f64;
            }
        }
    }
    buf.iter().zip(&counts).map(|(s, c)| s / c.sqrt()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_stats(v: &Volume, t: &LabelMap, class: u8) -> (f64, f64) {
        let xs: Vec<f64> = v
            .voxels()
            .iter()
            .zip(t.labels())
            .filter(|(_, &l)| l == class)
            .map(|(&x, _)| f64::from(x))
            .collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn slab_statistics_match_requested_means() {
        let spec = PhantomSpec { seed: 7, ..PhantomSpec::three_slab(48, 7) };
        let (v, t) = generate_phantom(&spec).unwrap();
        for c in 0..3u8 {
            let (mean, std) = class_stats(&v, &t, c);
            let want_mean = spec.means[c as usize];
            let want_std = spec.sigmas[c as usize];
            assert!((mean - want_mean).abs() <= 0.02 * want_mean, "class {c} mean {mean}");
            assert!((std - want_std).abs() <= 0.1 * want_std, "class {c} std {std}");
        }
        let (m0, s0) = class_stats(&v, &t, 0);
        let (m1, s1) = class_stats(&v, &t, 1);
        let (m2, _) = class_stats(&v, &t, 2);
        assert!((m0 - m1).abs() < 0.02 * m0);
        assert!(s1 > 5.0 * s0);
        assert!(m2 < 0.5 * m0);
    }

    #[test]
    fn zero_noise_is_piecewise_constant() {
        let spec = PhantomSpec { sigmas: [0.0; 3], ..PhantomSpec::three_slab(9, 1) };
        let (v, t) = generate_phantom(&spec).unwrap();
        for (&x, &l) in v.voxels().iter().zip(t.labels()) {
            assert_eq!(f64::from(x), spec.means[l as usize]);
        }
    }

    #[test]
    fn same_seed_same_volume() {
        let spec = PhantomSpec::three_slab(12, 99);
        assert_eq!(generate_phantom(&spec).unwrap(), generate_phantom(&spec).unwrap());
        let other = PhantomSpec { seed: 100, ..spec.clone() };
        assert_ne!(generate_phantom(&spec).unwrap().0, generate_phantom(&other).unwrap().0);
    }

    #[test]
    fn truth_matches_layout_function() {
        for layout in [PhantomLayout::Slabs, PhantomLayout::Blobs] {
            let spec = PhantomSpec {
                dims: Dims::new(10, 12, 14),
                layout,
                ..PhantomSpec::three_slab(1, 3)
            };
            let (_, t) = generate_phantom(&spec).unwrap();
            for i in 0..spec.dims.len() {
                let [x, y, z] = spec.dims.coords(i);
                assert_eq!(t.labels()[i], spec.class_at(x, y, z));
            }
            let present: std::collections::BTreeSet<u8> = t.labels().iter().copied().collect();
            assert_eq!(present.len(), 3, "{layout:?}");
        }
    }

    #[test]
    fn smoothing_preserves_unit_variance() {
        let dims = Dims::cube(20);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let white: Vec<f64> = (0..dims.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = smooth_unit_variance(&white, dims, 2);
        let var = s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64;
        assert!((var - 1.0).abs() < 0.15, "{var}");
        // box sum at an interior voxel by direct enumeration
        let (x, y, z) = (10, 9, 8);
        let mut direct = 0.0;
        for dz in -2i64..=2 {
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    let i = dims.index((x + dx) as usize, (y + dy) as usize, (z + dz) as usize);
                    direct += white[i];
                }
            }
        }
        assert!((s[dims.index(10, 9, 8)] - direct / 125f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_specs() {
        let bad = PhantomSpec { means: [-1.0, 0.0, 0.0], ..PhantomSpec::three_slab(4, 0) };
        assert!(matches!(generate_phantom(&bad), Err(VolumeError::InvalidSpec(_))));
        let bad = PhantomSpec { means: [70000.0, 0.0, 0.0], ..PhantomSpec::three_slab(4, 0) };
        assert!(matches!(generate_phantom(&bad), Err(VolumeError::InvalidSpec(_))));
        let bad = PhantomSpec { sigmas: [f64::NAN, 0.0, 0.0], ..PhantomSpec::three_slab(4, 0) };
        assert!(matches!(generate_phantom(&bad), Err(VolumeError::InvalidSpec(_))));
    }
}
