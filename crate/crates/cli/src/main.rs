//! `jule3d`: phantom generation, training, segmentation, baselines and evaluation.

mod artifacts;
mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jule3d::config::PipelineConfig;

use commands::Context;
use error::CliError;

#[derive(Parser)]
#[command(name = "jule3d", version, about = "Unsupervised 3D volume segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic three-class volume and its ground truth.
    Phantom(Opts),
    /// Sample patches and run joint clustering and CNN training.
    Train(Opts),
    /// Segment the input volume with the trained network.
    Segment(Opts),
    /// Intensity k-means and multilevel Otsu segmentations.
    Baseline(Opts),
    /// Score every label map in the output directory against ground truth.
    Eval(Opts),
    /// Run every step and print a comparison table.
    Pipeline(Opts),
}

#[derive(Args, Clone)]
struct Opts {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    outdir: Option<PathBuf>,
    /// Named specimen preset (lung-A, lung-B, lung-C).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long = "C")]
    c: Option<usize>,
    #[arg(long)]
    ns: Option<usize>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    threshold: Option<u16>,
    /// Otsu threshold count (1 or 2).
    #[arg(long)]
    levels: Option<usize>,
    /// Ground-truth label map for `eval` (default: <outdir>/truth.lbl).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Accept artifacts made under a different config.
    #[arg(long)]
    force: bool,
    /// Dump evaluation slices as PGM images.
    #[arg(long)]
    pgm: bool,
}

impl Opts {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        put("input", self.input.as_ref().map(|p| p.display().to_string()));
        put("outdir", self.outdir.as_ref().map(|p| p.display().to_string()));
        put("preset", self.preset.clone());
        put("seed", self.seed.map(|v| v.to_string()));
        put("threads", self.threads.map(|v| v.to_string()));
        put("K", self.k.map(|v| v.to_string()));
        put("C", self.c.map(|v| v.to_string()));
        put("n_s", self.ns.map(|v| v.to_string()));
        put("w", self.w.map(|v| v.to_string()));
        put("stride", self.stride.map(|v| v.to_string()));
        put("threshold", self.threshold.map(|v| v.to_string()));
        put("otsu_levels", self.levels.map(|v| v.to_string()));
        out
    }

    fn context(&self) -> Result<Context, CliError> {
        let cfg = PipelineConfig::load(self.config.as_deref(), &self.overrides())?;
        if cfg.threads > 0 {
            // Fails only if a pool already exists, which cannot happen this early.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
        }
        Context::new(cfg, self.force, self.pgm, self.truth.clone())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Phantom(o) => commands::phantom(&o.context()?),
        Command::Train(o) => commands::train(&o.context()?),
        Command::Segment(o) => {
            let ctx = o.context()?;
            let k = ctx.cfg.k;
            commands::segment(&ctx, &[k])
        }
        Command::Baseline(o) => {
            let ctx = o.context()?;
            let (k, levels) = (ctx.cfg.k, ctx.cfg.otsu_levels);
            commands::baseline(&ctx, &[k], &[levels])
        }
        Command::Eval(o) => {
            let ctx = o.context()?;
            let rows = commands::eval(&ctx)?;
            print!("{}", commands::comparison_table(&rows));
            Ok(())
        }
        Command::Pipeline(o) => commands::pipeline(&o.context()?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::FAILURE
        }
    }
}
