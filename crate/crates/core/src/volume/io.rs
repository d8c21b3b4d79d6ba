//! VOL3 container: little-endian header followed by the raw x-fastest payload.
//!
//! ```text
//! "VOL3" | dtype u8 | 3 reserved zero bytes | nx ny nz u32 | sx sy sz f32 | classes u32 | payload
//! ```

use std::fs;
use std::path::Path;

use super::{Dims, LabelMap, Volume, VolumeError};

pub const MAGIC: &[u8; 4] = b"VOL3";
pub const HEADER_LEN: usize = 36;

const DTYPE_U16: u8 = 1;
const DTYPE_U8: u8 = 2;

struct Header {
    dtype: u8,
    dims: Dims,
    spacing: [f32; 3],
    classes: u32,
}

impl Header {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(self.dtype);
        out.extend_from_slice(&[0; 3]);
        for d in self.dims.as_array() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for s in self.spacing {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&self.classes.to_le_bytes());
    }

    fn decode(bytes: &[u8], expected_dtype: u8) -> Result<Self, VolumeError> {
        if bytes.len() < HEADER_LEN {
            return Err(VolumeError::TruncatedHeader { expected: HEADER_LEN, found: bytes.len() });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(VolumeError::BadMagic(magic));
        }
        if bytes[4] != expected_dtype {
            return Err(VolumeError::WrongDtype { expected: expected_dtype, found: bytes[4] });
        }
        let word = |i: usize| -> [u8; 4] { bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap() };
        let raw_dims = [0, 1, 2].map(|i| u32::from_le_bytes(word(i)));
        if raw_dims.contains(&0) {
            return Err(VolumeError::ZeroDim(raw_dims));
        }
        let spacing = [3, 4, 5].map(|i| f32::from_le_bytes(word(i)));
        let classes = u32::from_le_bytes(word(6));
        Ok(Self {
            dtype: bytes[4],
            dims: Dims::new(raw_dims[0] as usize, raw_dims[1] as usize, raw_dims[2] as usize),
            spacing,
            classes,
        })
    }

    fn payload<'a>(&self, bytes: &'a [u8], elem: u64) -> Result<&'a [u8], VolumeError> {
        let [nx, ny, nz] = self.dims.as_array().map(|d| d as u64);
        let expected = nx * ny * nz * elem;
        let found = (bytes.len() - HEADER_LEN) as u64;
        if found < expected {
            return Err(VolumeError::TruncatedPayload { expected, found });
        }
        if found > expected {
            return Err(VolumeError::TrailingBytes(found - expected));
        }
        Ok(&bytes[HEADER_LEN..])
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), VolumeError> {
    fs::write(path, bytes)?;
    Ok(())
}

pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    let mut out = Vec::with_capacity(HEADER_LEN + 2 * v.voxels.len());
    Header { dtype: DTYPE_U16, dims: v.dims, spacing: v.spacing, classes: 0 }.encode(&mut out);
    for x in &v.voxels {
        out.extend_from_slice(&x.to_le_bytes());
    }
    write_file(path.as_ref(), &out)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume, VolumeError> {
    let bytes = fs::read(path)?;
    let header = Header::decode(&bytes, DTYPE_U16)?;
    let payload = header.payload(&bytes, 2)?;
    let voxels = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Volume::new(header.dims, header.spacing, voxels)
}

/// Writes a label map after re-validating its class invariant.
pub fn save_labelmap(map: &LabelMap, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    map.validate()?;
    let mut out = Vec::with_capacity(HEADER_LEN + map.labels.len());
    Header { dtype: DTYPE_U8, dims: map.dims, spacing: map.spacing, classes: map.classes }
        .encode(&mut out);
    out.extend_from_slice(&map.labels);
    write_file(path.as_ref(), &out)
}

pub fn load_labelmap(path: impl AsRef<Path>) -> Result<LabelMap, VolumeError> {
    let bytes = fs::read(path)?;
    let header = Header::decode(&bytes, DTYPE_U8)?;
    let payload = header.payload(&bytes, 1)?;
    LabelMap::new(header.dims, header.spacing, header.classes, payload.to_vec())
}
