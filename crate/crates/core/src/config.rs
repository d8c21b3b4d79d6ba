//! Pipeline configuration in a flat `key = value` text format.
//!
//! Values resolve in order: built-in defaults, then a named preset, then
//! the file, then command-line overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::jule::JuleConfig;
use crate::net3d::{TrainConfig, PATCH};
use crate::segmenter::SegmentationConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot read `{value}` as {expected}")]
    TypeError { key: String, value: String, expected: &'static str },
    #[error("key `{key}`: {reason}")]
    ConstraintViolation { key: String, reason: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Scanned specimens with their foreground thresholds and final cluster counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub threshold: u16,
    pub final_clusters: usize,
}

pub const PRESETS: [Preset; 3] = [
    Preset { name: "lung-A", threshold: 4000, final_clusters: 100 },
    Preset { name: "lung-B", threshold: 2820, final_clusters: 10 },
    Preset { name: "lung-C", threshold: 4700, final_clusters: 100 },
];

pub fn preset(name: &str) -> Option<Preset> {
    PRESETS.iter().copied().find(|p| p.name.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub outdir: PathBuf,
    pub preset: Option<String>,
    pub n_s: usize,
    pub w: usize,
    pub threshold: u16,
    pub seed: u64,
    pub stride: usize,
    pub k: usize,
    pub final_clusters: usize,
    pub eta: f64,
    pub epochs: usize,
    pub ks: usize,
    pub scale: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub baseline_kmeans: bool,
    pub baseline_otsu: bool,
    pub otsu_levels: usize,
    pub eval_slices: usize,
    pub phantom_size: usize,
    pub phantom_layout: String,
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let jule = JuleConfig::default();
        Self {
            input: None,
            outdir: PathBuf::from("out"),
            preset: None,
            n_s: 10_000,
            w: PATCH,
            threshold: 0,
            seed: 0,
            stride: 5,
            k: 3,
            final_clusters: 100,
            eta: jule.eta,
            epochs: jule.epochs,
            ks: jule.ks,
            scale: jule.scale,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            weight_decay: train.weight_decay,
            batch_size: train.batch_size,
            baseline_kmeans: true,
            baseline_otsu: true,
            otsu_levels: 2,
            eval_slices: 7,
            phantom_size: 96,
            phantom_layout: "slabs".into(),
            threads: 0,
        }
    }
}

/// Keys accepted in files and overrides, in canonical order.
pub const KEYS: [&str; 25] = [
    "input",
    "outdir",
    "preset",
    "n_s",
    "w",
    "threshold",
    "seed",
    "stride",
    "K",
    "C",
    "eta",
    "epochs",
    "Ks",
    "a",
    "learning_rate",
    "momentum",
    "weight_decay",
    "batch_size",
    "baseline_kmeans",
    "baseline_otsu",
    "otsu_levels",
    "eval_slices",
    "phantom_size",
    "phantom_layout",
    "threads",
];

/// Keys that do not change any result and are left out of the hash.
const UNHASHED: [&str; 2] = ["outdir", "threads"];

fn canonical_key(key: &str) -> Option<&'static str> {
    let alias = match key {
        "ns" => "n_s",
        "s" => "stride",
        "k" => "K",
        "c" => "C",
        "ks" => "Ks",
        "lr" => "learning_rate",
        "levels" => "otsu_levels",
        _ => key,
    };
    KEYS.iter().copied().find(|&k| k == alias)
}

/// Splits config text into `(key, value)` pairs. `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: n + 1 })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: n + 1 });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::TypeError { key: key.into(), value: value.into(), expected })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::TypeError { key: key.into(), value: value.into(), expected: "a boolean" }),
    }
}

fn violation(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::ConstraintViolation { key: key.into(), reason: reason.into() }
}

impl PipelineConfig {
    /// Resolves `pairs` (later entries win) on top of defaults and any named preset.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut resolved: Vec<(&'static str, &str)> = Vec::new();
        for (k, v) in pairs {
            let key = canonical_key(k).ok_or_else(|| ConfigError::UnknownKey(k.clone()))?;
            resolved.retain(|(r, _)| *r != key);
            resolved.push((key, v));
        }
        let mut cfg = Self::default();
        if let Some((_, name)) = resolved.iter().find(|(k, _)| *k == "preset") {
            let p = preset(name).ok_or_else(|| violation("preset", format!("unknown preset `{name}`")))?;
            cfg.preset = Some(p.name.to_string());
            cfg.threshold = p.threshold;
            cfg.final_clusters = p.final_clusters;
        }
        for &(key, value) in &resolved {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (if any) and applies `overrides` on top.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::Io { path: p.display().to_string(), reason: e.to_string() })?;
                parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        pairs.extend(overrides.iter().cloned());
        Self::from_pairs(&pairs)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    fn set(&mut self, key: &'static str, v: &str) -> Result<(), ConfigError> {
        const UINT: &str = "a nonnegative integer";
        const REAL: &str = "a real number";
        match key {
            "input" => self.input = (!v.is_empty()).then(|| PathBuf::from(v)),
            "outdir" => self.outdir = PathBuf::from(v),
            "preset" => {}
            "n_s" => self.n_s = parse(key, v, UINT)?,
            "w" => self.w = parse(key, v, UINT)?,
            "threshold" => self.threshold = parse(key, v, "a 16-bit intensity")?,
            "seed" => self.seed = parse(key, v, UINT)?,
            "stride" => self.stride = parse(key, v, UINT)?,
            "K" => self.k = parse(key, v, UINT)?,
            "C" => self.final_clusters = parse(key, v, UINT)?,
            "eta" => self.eta = parse(key, v, REAL)?,
            "epochs" => self.epochs = parse(key, v, UINT)?,
            "Ks" => self.ks = parse(key, v, UINT)?,
            "a" => self.scale = parse(key, v, REAL)?,
            "learning_rate" => self.learning_rate = parse(key, v, REAL)?,
            "momentum" => self.momentum = parse(key, v, REAL)?,
            "weight_decay" => self.weight_decay = parse(key, v, REAL)?,
            "batch_size" => self.batch_size = parse(key, v, UINT)?,
            "baseline_kmeans" => self.baseline_kmeans = parse_bool(key, v)?,
            "baseline_otsu" => self.baseline_otsu = parse_bool(key, v)?,
            "otsu_levels" => self.otsu_levels = parse(key, v, UINT)?,
            "eval_slices" => self.eval_slices = parse(key, v, UINT)?,
            "phantom_size" => self.phantom_size = parse(key, v, UINT)?,
            "phantom_layout" => self.phantom_layout = v.to_ascii_lowercase(),
            "threads" => self.threads = parse(key, v, UINT)?,
            _ => unreachable!("key list and setter disagree on {key}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.w % 2 == 0 || self.w == 0 {
            return Err(violation("w", format!("patch size {} must be odd", self.w)));
        }
        if self.n_s < 2 {
            return Err(violation("n_s", "need at least 2 training patches"));
        }
        if self.stride == 0 || self.stride > self.w || self.stride % 2 == 0 {
            return Err(violation("stride", format!("stride {} must be odd and within 1..={}", self.stride, self.w)));
        }
        if self.k < 2 || self.k > 254 {
            return Err(violation("K", format!("K = {} must lie in 2..=254", self.k)));
        }
        if self.final_clusters < 1 || self.final_clusters >= self.n_s {
            return Err(violation("C", format!("C = {} must satisfy 1 <= C < n_s = {}", self.final_clusters, self.n_s)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(violation("eta", format!("{} must lie in (0, 1)", self.eta)));
        }
        if self.epochs == 0 {
            return Err(violation("epochs", "must be >= 1"));
        }
        if self.ks == 0 {
            return Err(violation("Ks", "must be >= 1"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(violation("a", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(violation("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(violation("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(violation("weight_decay", "must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(violation("batch_size", "must be >= 1"));
        }
        if !(1..=2).contains(&self.otsu_levels) {
            return Err(violation("otsu_levels", "must be 1 or 2"));
        }
        if self.phantom_size < self.w {
            return Err(violation("phantom_size", format!("must be at least w = {}", self.w)));
        }
        if !["slabs", "blobs"].contains(&self.phantom_layout.as_str()) {
            return Err(violation("phantom_layout", "must be `slabs` or `blobs`"));
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "input" => self.input.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "outdir" => self.outdir.display().to_string(),
            "preset" => self.preset.clone().unwrap_or_default(),
            "n_s" => self.n_s.to_string(),
            "w" => self.w.to_string(),
            "threshold" => self.threshold.to_string(),
            "seed" => self.seed.to_string(),
            "stride" => self.stride.to_string(),
            "K" => self.k.to_string(),
            "C" => self.final_clusters.to_string(),
            "eta" => self.eta.to_string(),
            "epochs" => self.epochs.to_string(),
            "Ks" => self.ks.to_string(),
            "a" => self.scale.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "baseline_kmeans" => self.baseline_kmeans.to_string(),
            "baseline_otsu" => self.baseline_otsu.to_string(),
            "otsu_levels" => self.otsu_levels.to_string(),
            "eval_slices" => self.eval_slices.to_string(),
            "phantom_size" => self.phantom_size.to_string(),
            "phantom_layout" => self.phantom_layout.clone(),
            "threads" => self.threads.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Every key in canonical order; parsing this text reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.value_of(key));
        }
        s
    }

    /// Canonical text of the result-affecting keys.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS.iter().filter(|k| !UNHASHED.contains(k)) {
            let _ = writeln!(s, "{key} = {}", self.value_of(key));
        }
        s
    }

    /// 64-bit FNV-1a of [`PipelineConfig::canonical_text`].
    pub fn hash(&self) -> u64 {
        fnv1a64(self.canonical_text().as_bytes())
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    pub fn jule(&self) -> JuleConfig {
        JuleConfig {
            final_clusters: self.final_clusters,
            eta: self.eta,
            epochs: self.epochs,
            train: TrainConfig {
                learning_rate: self.learning_rate,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
                batch_size: self.batch_size,
                ..TrainConfig::default()
            },
            ks: self.ks,
            scale: self.scale,
            seed: self.seed,
        }
    }

    pub fn segmentation(&self) -> SegmentationConfig {
        SegmentationConfig { w: self.w, stride: self.stride, k: self.k, threshold: self.threshold, seed: self.seed }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
