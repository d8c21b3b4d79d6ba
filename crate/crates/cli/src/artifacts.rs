//! Artifact files, their metadata sidecars and reload checks.

use std::fs;
use std::path::{Path, PathBuf};

use jule3d::net3d::NetParams;
use jule3d::sampler::NormStats;
use jule3d::volume::{load_labelmap, load_volume, save_labelmap, save_volume, LabelMap, Volume, SENTINEL};
use serde_json::{json, Value};

use crate::error::CliError;

pub const PHANTOM: &str = "phantom.vol";
pub const TRUTH: &str = "truth.lbl";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const NORM: &str = "norm.json";
pub const PARTITION: &str = "partition.txt";
pub const TRACE: &str = "trace.txt";
pub const METRICS: &str = "metrics.json";
pub const COMPARISON: &str = "comparison.txt";

/// Label map file for `method` at `k` classes.
pub fn labelmap_name(method: &str, k: usize) -> String {
    format!("{method}_k{k}.lbl")
}

pub fn meta_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    let back = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if back != text {
        return Err(CliError::Artifact(format!("{} did not read back intact", path.display())));
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))? + "\n";
    write_text(path, &text)
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))
}

/// Writes the sidecar recording which config produced `artifact`.
pub fn write_meta(artifact: &Path, hash: &str, mut fields: Value) -> Result<(), CliError> {
    fields["config_hash"] = json!(hash);
    fields["artifact"] = json!(artifact.file_name().map(|n| n.to_string_lossy().into_owned()));
    write_json(&meta_path(artifact), &fields)
}

pub fn read_meta(artifact: &Path) -> Result<Value, CliError> {
    let p = meta_path(artifact);
    if !p.exists() {
        return Err(CliError::Artifact(format!("{} has no metadata sidecar", artifact.display())));
    }
    read_json(&p)
}

/// Fails unless `artifact` was produced with config `hash` (or `force` is set).
pub fn check_hash(artifact: &Path, hash: &str, force: bool) -> Result<Value, CliError> {
    let meta = read_meta(artifact)?;
    let found = meta["config_hash"].as_str().unwrap_or_default();
    if found != hash && !force {
        return Err(CliError::HashMismatch {
            artifact: artifact.display().to_string(),
            expected: hash.to_string(),
            found: found.to_string(),
        });
    }
    Ok(meta)
}

pub fn save_volume_checked(v: &Volume, path: &Path) -> Result<(), CliError> {
    save_volume(v, path)?;
    if &load_volume(path)? != v {
        return Err(CliError::Artifact(format!("{} did not read back intact", path.display())));
    }
    Ok(())
}

pub fn save_labelmap_checked(map: &LabelMap, path: &Path) -> Result<(), CliError> {
    save_labelmap(map, path)?;
    if &load_labelmap(path)? != map {
        return Err(CliError::Artifact(format!("{} did not read back intact", path.display())));
    }
    Ok(())
}

pub fn save_params_checked(params: &NetParams, path: &Path) -> Result<(), CliError> {
    params.save(path)?;
    if &NetParams::load(path)? != params {
        return Err(CliError::Artifact(format!("{} did not read back intact", path.display())));
    }
    Ok(())
}

pub fn save_norm(stats: NormStats, path: &Path, hash: &str) -> Result<(), CliError> {
    let v = json!({ "mean": stats.mean, "std": stats.std, "degenerate": stats.degenerate, "config_hash": hash });
    write_json(path, &v)?;
    load_norm(path).map(|_| ())
}

pub fn load_norm(path: &Path) -> Result<NormStats, CliError> {
    let v = read_json(path)?;
    let (Some(mean), Some(std)) = (v["mean"].as_f64(), v["std"].as_f64()) else {
        return Err(CliError::Artifact(format!("{} lacks mean/std", path.display())));
    };
    let mut stats = NormStats::new(mean, std).map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))?;
    stats.degenerate = v["degenerate"].as_bool().unwrap_or(false);
    Ok(stats)
}

/// 8-bit binary PGM of one z-slice; labels spread over gray levels, unlabeled black.
pub fn labelmap_slice_pgm(map: &LabelMap, z: usize) -> Vec<u8> {
    let d = map.dims();
    let classes = map.classes().max(1) as usize;
    let mut out = format!("P5\n{} {}\n255\n", d.nx, d.ny).into_bytes();
    for y in 0..d.ny {
        for x in 0..d.nx {
            let l = map.get(x, y, z);
            out.push(if l == SENTINEL { 0 } else { (64 + usize::from(l) * 191 / classes.saturating_sub(1).max(1)) as u8 });
        }
    }
    out
}

/// Intensity slice scaled to the slice's own range.
pub fn volume_slice_pgm(v: &Volume, z: usize) -> Vec<u8> {
    let d = v.dims();
    let plane = &v.voxels()[d.index(0, 0, z)..d.index(0, 0, z) + d.nx * d.ny];
    let lo = plane.iter().copied().min().unwrap_or(0);
    let hi = plane.iter().copied().max().unwrap_or(0);
    let span = f64::from(hi - lo).max(1.0);
    let mut out = format!("P5\n{} {}\n255\n", d.nx, d.ny).into_bytes();
    out.extend(plane.iter().map(|&x| (f64::from(x - lo) / span * 255.0).round() as u8));
    out
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}
