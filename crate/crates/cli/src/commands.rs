use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use jule3d::config::PipelineConfig;
use jule3d::jule::run_jule_with;
use jule3d::net3d::NetParams;
use jule3d::sampler::{normalize_patches, sample_training_patches};
use jule3d::segmenter::{
    baseline_intensity_kmeans, baseline_otsu, evaluate_nmi, evaluation_slices, segment_volume, SegmentationConfig,
};
use jule3d::volume::{generate_phantom, load_labelmap, load_volume, LabelMap, PhantomSpec, Volume};
use serde_json::{json, Value};

use crate::artifacts::*;
use crate::error::CliError;

/// K values the pipeline sweeps in addition to the configured one.
pub const K_SWEEP: [usize; 4] = [2, 3, 4, 5];

pub struct Context {
    pub cfg: PipelineConfig,
    pub hash: String,
    pub force: bool,
    pub pgm: bool,
    pub truth: Option<PathBuf>,
}

impl Context {
    pub fn new(cfg: PipelineConfig, force: bool, pgm: bool, truth: Option<PathBuf>) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.outdir).map_err(|e| CliError::Io(format!("{}: {e}", cfg.outdir.display())))?;
        Ok(Self { hash: cfg.hash_hex(), cfg, force, pgm, truth })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.outdir.join(name)
    }

    fn input_path(&self) -> Result<PathBuf, CliError> {
        if let Some(p) = &self.cfg.input {
            return Ok(p.clone());
        }
        let p = self.out(PHANTOM);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::MissingInput)
        }
    }

    fn load_input(&self) -> Result<Volume, CliError> {
        Ok(load_volume(self.input_path()?)?)
    }

    fn slices(&self, nz: usize) -> Vec<usize> {
        evaluation_slices(nz, self.cfg.eval_slices)
    }

    fn dump_label_slices(&self, map: &LabelMap, stem: &str) -> Result<(), CliError> {
        if !self.pgm {
            return Ok(());
        }
        let dir = self.out("pgm");
        fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        for z in self.slices(map.dims().nz) {
            write_bytes(&dir.join(format!("{stem}_z{z:03}.pgm")), &labelmap_slice_pgm(map, z))?;
        }
        Ok(())
    }
}

pub fn phantom(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let layout = cfg.phantom_layout.parse().map_err(CliError::Artifact)?;
    let spec = PhantomSpec { layout, ..PhantomSpec::three_slab(cfg.phantom_size, cfg.seed) };
    let (v, truth) = generate_phantom(&spec)?;
    let (vp, tp) = (ctx.out(PHANTOM), ctx.out(TRUTH));
    save_volume_checked(&v, &vp)?;
    write_meta(&vp, &ctx.hash, json!({ "kind": "volume", "seed": cfg.seed }))?;
    save_labelmap_checked(&truth, &tp)?;
    write_meta(&tp, &ctx.hash, json!({ "kind": "truth", "seed": cfg.seed }))?;
    if ctx.pgm {
        let dir = ctx.out("pgm");
        fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        for z in ctx.slices(v.dims().nz) {
            write_bytes(&dir.join(format!("volume_z{z:03}.pgm")), &volume_slice_pgm(&v, z))?;
        }
        ctx.dump_label_slices(&truth, "truth")?;
    }
    println!("wrote {} and {}", vp.display(), tp.display());
    Ok(())
}

pub fn train(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let start = Instant::now();
    let v = ctx.load_input()?;
    let raw = sample_training_patches(&v, cfg.n_s, cfg.w, cfg.threshold, cfg.seed)?;
    let (patches, stats) = normalize_patches(&raw);
    let out = run_jule_with(&patches, cfg.jule(), |r| println!("{r}"))?;

    let ckpt = ctx.out(CHECKPOINT);
    save_params_checked(&out.params, &ckpt)?;
    let runtime_s = start.elapsed().as_secs_f64();
    write_meta(&ckpt, &ctx.hash, json!({ "kind": "checkpoint", "seed": cfg.seed, "runtime_s": runtime_s }))?;
    save_norm(stats, &ctx.out(NORM), &ctx.hash)?;

    let header = format!("# config_hash={}\n", ctx.hash);
    let mut labels = header.clone();
    for l in out.partition.labels() {
        let _ = writeln!(labels, "{l}");
    }
    write_text(&ctx.out(PARTITION), &labels)?;
    let mut trace = header;
    for r in &out.trace {
        let _ = writeln!(trace, "{r}");
    }
    write_text(&ctx.out(TRACE), &trace)?;
    println!("wrote {} ({} training events, {:.1}s)", ckpt.display(), out.trace.len(), runtime_s);
    Ok(())
}

fn load_model(ctx: &Context) -> Result<(NetParams, jule3d::sampler::NormStats), CliError> {
    let ckpt = ctx.out(CHECKPOINT);
    if !ckpt.exists() {
        return Err(CliError::MissingCheckpoint(ckpt.display().to_string()));
    }
    let norm = ctx.out(NORM);
    if !norm.exists() {
        return Err(CliError::MissingCheckpoint(norm.display().to_string()));
    }
    Ok((NetParams::load(&ckpt)?, load_norm(&norm)?))
}

pub fn segment(ctx: &Context, ks: &[usize]) -> Result<(), CliError> {
    let (params, stats) = load_model(ctx)?;
    let v = ctx.load_input()?;
    for &k in ks {
        let start = Instant::now();
        let seg_cfg = SegmentationConfig { k, ..ctx.cfg.segmentation() };
        let seg = segment_volume(&v, &params, stats, &seg_cfg)?;
        let path = ctx.out(&labelmap_name("jule", k));
        save_labelmap_checked(&seg.map, &path)?;
        let runtime_s = start.elapsed().as_secs_f64();
        write_meta(
            &path,
            &ctx.hash,
            json!({ "method": "jule", "K": k, "seed": ctx.cfg.seed, "runtime_s": runtime_s, "patches": seg.patches }),
        )?;
        ctx.dump_label_slices(&seg.map, &format!("jule_k{k}"))?;
        println!("wrote {} ({} patches, {:.1}s)", path.display(), seg.patches, runtime_s);
    }
    Ok(())
}

pub fn baseline(ctx: &Context, ks: &[usize], levels: &[usize]) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let v = ctx.load_input()?;
    let save = |method: &str, k: usize, map: LabelMap, start: Instant| -> Result<(), CliError> {
        let path = ctx.out(&labelmap_name(method, k));
        save_labelmap_checked(&map, &path)?;
        let runtime_s = start.elapsed().as_secs_f64();
        write_meta(&path, &ctx.hash, json!({ "method": method, "K": k, "seed": cfg.seed, "runtime_s": runtime_s }))?;
        ctx.dump_label_slices(&map, &format!("{method}_k{k}"))?;
        println!("wrote {}", path.display());
        Ok(())
    };
    if cfg.baseline_kmeans {
        for &k in ks {
            let start = Instant::now();
            save("kmeans", k, baseline_intensity_kmeans(&v, k, cfg.threshold, cfg.seed)?, start)?;
        }
    }
    if cfg.baseline_otsu {
        for &l in levels {
            let start = Instant::now();
            save("otsu", l + 1, baseline_otsu(&v, l, cfg.threshold)?, start)?;
        }
    }
    Ok(())
}

/// Label maps in the output directory, sorted by file name.
fn labelmaps(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.ends_with(".lbl") && name != TRUTH
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn eval(ctx: &Context) -> Result<Vec<Value>, CliError> {
    let truth_path = ctx.truth.clone().unwrap_or_else(|| ctx.out(TRUTH));
    if !truth_path.exists() {
        return Err(CliError::MissingTruth(truth_path.display().to_string()));
    }
    let truth = load_labelmap(&truth_path)?;
    let slices = ctx.slices(truth.dims().nz);
    let maps = labelmaps(&ctx.cfg.outdir)?;
    if maps.is_empty() {
        return Err(CliError::NothingToEvaluate(ctx.cfg.outdir.display().to_string()));
    }
    let mut rows = Vec::new();
    for path in maps {
        let meta = check_hash(&path, &ctx.hash, ctx.force)?;
        let map = load_labelmap(&path)?;
        for s in [&slices[..], &[]] {
            let score = evaluate_nmi(&map, &truth, s)?;
            rows.push(json!({
                "method": meta["method"],
                "K": meta["K"],
                "nmi": score.nmi,
                "evaluated_voxels": score.voxels,
                "slices": s,
                "seed": meta["seed"],
                "runtime_s": meta["runtime_s"],
            }));
        }
    }
    let report = json!({ "config_hash": ctx.hash, "truth": truth_path.display().to_string(), "methods": rows });
    write_json(&ctx.out(METRICS), &report)?;
    println!("wrote {}", ctx.out(METRICS).display());
    Ok(rows)
}

/// Table of NMI per method and K, on the evaluation slices and on the whole volume.
pub fn comparison_table(rows: &[Value]) -> String {
    let mut out = format!("{:<8} {:>3} {:>12} {:>12} {:>10}\n", "method", "K", "nmi_slices", "nmi_volume", "voxels");
    for pair in rows.chunks(2) {
        let (sl, full) = (&pair[0], &pair[1]);
        let _ = writeln!(
            out,
            "{:<8} {:>3} {:>12.4} {:>12.4} {:>10}",
            sl["method"].as_str().unwrap_or("?"),
            sl["K"],
            sl["nmi"].as_f64().unwrap_or(f64::NAN),
            full["nmi"].as_f64().unwrap_or(f64::NAN),
            full["evaluated_voxels"],
        );
    }
    out
}

pub fn pipeline(ctx: &Context) -> Result<(), CliError> {
    if ctx.cfg.input.is_none() {
        phantom(ctx)?;
    }
    train(ctx)?;
    let mut ks = K_SWEEP.to_vec();
    if !ks.contains(&ctx.cfg.k) {
        ks.push(ctx.cfg.k);
    }
    segment(ctx, &ks)?;
    baseline(ctx, &ks, &[1, 2])?;
    let rows = eval(ctx)?;
    let table = comparison_table(&rows);
    write_text(&ctx.out(COMPARISON), &format!("# config_hash={}\n{table}", ctx.hash))?;
    print!("{table}");
    Ok(())
}
