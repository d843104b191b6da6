use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use splatkin_core::guidance::{DistillMode, NoiseSchedule};
use splatkin_core::pipeline::{
    build_pool, run_pipeline, run_stage1, write_stage1_csv, Framing, RunConfig, Seeds, RING_MANIFEST,
};
use splatkin_core::plot::{line_plot, write_xy_csv};
use splatkin_core::recon::{optimize_stage2, write_loss_csv, ReconConfig, TargetView};
use splatkin_core::schedule::{fit_schedule, t_curve, PhaseTable, ScheduleFit, SearchGrid, MAX_TIMESTEP};
use splatkin_core::splat::{read_ply, render, write_ply, Camera, CapsuleHumanoid, RenderOptions};
use splatkin_core::vcr::{consistency, denoise_independent, refine_ring, RingManifest, ToyDenoiser, ViewRing, VcrConfig};
use splatkin_core::Image;

#[derive(Parser)]
#[command(name = "splatkin", version, about = "Gaussian-splat avatar distillation and refinement")]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "SPLATKIN_THREADS")]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the timestep weight to a phase table.
    FitSchedule(FitScheduleArgs),
    /// Draw the fitted weight and timestep curve as PPM line plots.
    PlotSchedule(PlotScheduleArgs),
    /// Render a PLY cloud from one orbit camera.
    Render(RenderArgs),
    /// Stage one on its own: distill a cloud from the oracle targets.
    Distill(DistillArgs),
    /// Refine a ring of views with cross-view attention.
    Refine(RefineArgs),
    /// Fit a cloud to a ring of target views.
    Reconstruct(ReconstructArgs),
    /// Both stages end to end, with a manifest.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct FitScheduleArgs {
    /// Phase table JSON; the built-in table when omitted.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Stretch the table's budgets to this many steps.
    #[arg(long)]
    steps: Option<u32>,
    #[arg(long, default_value_t = 0)]
    offset: i32,
    #[arg(long)]
    out: PathBuf,
    /// (t, weight) rows.
    #[arg(long)]
    weights_csv: Option<PathBuf>,
    /// (step, t) rows.
    #[arg(long)]
    curve_csv: Option<PathBuf>,
}

#[derive(Args)]
struct PlotScheduleArgs {
    /// Output of `fit-schedule`.
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 640)]
    width: usize,
    #[arg(long, default_value_t = 360)]
    height: usize,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    ply: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Coverage map (PGM).
    #[arg(long)]
    alpha_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    azimuth: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    elevation: f64,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long)]
    radius: Option<f64>,
    /// Close-up on the built-in body's head.
    #[arg(long)]
    head: bool,
    #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
    background: Vec<f64>,
}

#[derive(Args)]
struct DistillArgs {
    /// Run configuration JSON; only its stage-one parts are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target bank directory in place of the rendered reference.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    mode: Option<DistillMode>,
    #[arg(long)]
    steps: Option<u32>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tau: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gaussians: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    out_ply: PathBuf,
    /// Per step: t, mean |δ|, loss proxy and splat count.
    #[arg(long)]
    log_csv: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    /// Directory with a ring manifest and one PPM per view.
    #[arg(long)]
    views_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    steps: Option<u32>,
    #[arg(long)]
    t_ref: Option<u32>,
    #[arg(long)]
    lambda_self: Option<f64>,
    /// Denoise every view on its own instead.
    #[arg(long)]
    no_vcr: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to `consistency.csv` in the output directory.
    #[arg(long)]
    consistency_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Directory with a ring manifest and one PPM per view.
    #[arg(long)]
    views_dir: PathBuf,
    #[arg(long)]
    in_ply: PathBuf,
    #[arg(long)]
    out_ply: PathBuf,
    #[arg(long, default_value_t = 800)]
    steps: u32,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = splatkin_core::recon::DEFAULT_LAMBDA_L1)]
    lambda_l1: f64,
    #[arg(long, default_value_t = splatkin_core::recon::DEFAULT_LAMBDA_PERC)]
    lambda_perc: f64,
    #[arg(long)]
    log_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    factor: usize,
    #[arg(long, default_value_t = 2)]
    margin: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
    background: Vec<f64>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the small built-in configuration.
    #[arg(long, conflicts_with = "config")]
    smoke: bool,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Derive every seed from this one.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip ring refinement; stage two fits the raw renders.
    #[arg(long)]
    no_vcr: bool,
}

/// What `fit-schedule` writes and `plot-schedule` reads.
#[derive(Serialize, Deserialize)]
struct ScheduleDoc {
    table: PhaseTable,
    offset: i32,
    fit: ScheduleFit,
}

fn rgb(v: &[f64]) -> Result<[f64; 3]> {
    match v {
        [r, g, b] => Ok([*r, *g, *b]),
        _ => bail!("expected three comma-separated components, got {}", v.len()),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn fit_schedule_cmd(a: FitScheduleArgs) -> Result<()> {
    let mut table: PhaseTable = match &a.table {
        Some(p) => read_json(p)?,
        None => PhaseTable::default(),
    };
    if let Some(n) = a.steps {
        table = table.scaled_to(n)?;
    }
    let fit = fit_schedule(&table, &SearchGrid::default())?;
    if let Some(w) = &fit.warning {
        log::warn!("poor fit: objective {:.3e}", w.objective);
    }
    println!(
        "s1={:.3} s2={:.3} T={:.2} objective={:.3e} mass=[{:.4}, {:.4}, {:.4}]",
        fit.params.s1, fit.params.s2, fit.params.mode, fit.objective, fit.range_mass[0], fit.range_mass[1], fit.range_mass[2]
    );
    if let Some(p) = &a.weights_csv {
        write_xy_csv(p, "t,weight", (1..=MAX_TIMESTEP).zip(fit.params.weights()))?;
    }
    if let Some(p) = &a.curve_csv {
        let curve = t_curve(&fit.params, &table, a.offset);
        write_xy_csv(p, "step,t", (1u32..).zip(curve))?;
    }
    write_json(
        &a.out,
        &ScheduleDoc {
            table,
            offset: a.offset,
            fit,
        },
    )
}

fn plot_schedule_cmd(a: PlotScheduleArgs) -> Result<()> {
    let doc: ScheduleDoc = read_json(&a.params)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let weights: Vec<(f64, f64)> = (1..=MAX_TIMESTEP)
        .zip(doc.fit.params.weights())
        .map(|(t, w)| (t as f64, w))
        .collect();
    let curve: Vec<(f64, f64)> = t_curve(&doc.fit.params, &doc.table, doc.offset)
        .into_iter()
        .enumerate()
        .map(|(i, t)| ((i + 1) as f64, t as f64))
        .collect();
    line_plot(&weights, a.width, a.height, [0.85, 0.2, 0.1])?.write_ppm(a.out_dir.join("weight.ppm"))?;
    line_plot(&curve, a.width, a.height, [0.1, 0.3, 0.8])?.write_ppm(a.out_dir.join("curve.ppm"))?;
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let cloud = read_ply(&a.ply)?;
    let mut framing = Framing {
        size: a.size,
        ..Framing::default()
    };
    if let Some(r) = a.radius {
        framing.radius = r;
    }
    let cam = if a.head {
        framing.head_camera(a.azimuth, a.elevation, &CapsuleHumanoid::default())
    } else {
        framing.camera(a.azimuth, a.elevation)
    };
    let out = render(&cloud, &cam, rgb(&a.background)?, &RenderOptions::default())?;
    out.color.write_ppm(&a.out)?;
    if let Some(p) = &a.alpha_out {
        out.alpha.write_ppm(p)?;
    }
    Ok(())
}

fn distill_cmd(a: DistillArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::read_json(p)?,
        None => RunConfig::default(),
    };
    if a.bank.is_some() {
        cfg.oracle.bank = a.bank.clone();
    }
    if let Some(m) = a.mode {
        cfg.guidance.mode = m;
    }
    if let Some(n) = a.steps {
        cfg.stage1.steps = n;
    }
    if let Some(g) = a.gamma {
        cfg.guidance.gamma = g;
    }
    if let Some(t) = a.tau {
        cfg.guidance.tau = t;
    }
    if let Some(s) = a.seed {
        cfg.seeds = Seeds::from_master(s);
    }
    if let Some(n) = a.gaussians {
        cfg.stage1.gaussians = n;
    }
    if let Some(s) = a.size {
        cfg.framing.size = s;
    }
    cfg.validate()?;
    let pool = build_pool(&cfg)?;
    let out = run_stage1(&cfg, &pool, Some(&a.out_ply))?;
    write_ply(&out.cloud, &a.out_ply)?;
    if let Some(p) = &a.log_csv {
        write_stage1_csv(p, &out.log)?;
    }
    println!("{} steps, {} gaussians", out.log.len(), out.cloud.len());
    Ok(())
}

struct RingDir {
    manifest: RingManifest,
    ring: ViewRing,
    images: Vec<Image>,
}

fn read_ring_dir(dir: &Path) -> Result<RingDir> {
    let manifest = RingManifest::read_json(dir.join(RING_MANIFEST))?;
    let ring = manifest.ring()?;
    let images = manifest
        .views
        .iter()
        .map(|v| Image::read_ppm(dir.join(&v.image)))
        .collect::<splatkin_core::Result<Vec<_>>>()?;
    Ok(RingDir { manifest, ring, images })
}

fn refine_cmd(a: RefineArgs) -> Result<()> {
    let src = read_ring_dir(&a.views_dir)?;
    let first = src.images.first().context("ring has no views")?;
    let mut cfg = VcrConfig::default();
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(t) = a.t_ref {
        cfg.t_ref = t;
    }
    if let Some(l) = a.lambda_self {
        cfg.lambda_self = l;
    }
    let den = ToyDenoiser::new(first.width(), first.height(), cfg.denoiser_seed, NoiseSchedule::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let refined = if a.no_vcr {
        denoise_independent(&src.images, &src.ring, &den, &cfg, &mut rng)?
    } else {
        refine_ring(&src.images, &src.ring, &den, &cfg, &mut rng)?
    };
    std::fs::create_dir_all(&a.out_dir)?;
    for (entry, img) in src.manifest.views.iter().zip(&refined) {
        img.write_ppm(a.out_dir.join(&entry.image))?;
        if let Some(alpha) = &entry.alpha {
            std::fs::copy(a.views_dir.join(alpha), a.out_dir.join(alpha))?;
        }
    }
    src.manifest.write_json(a.out_dir.join(RING_MANIFEST))?;
    let before = consistency(&src.images, &src.ring, &den)?;
    let after = consistency(&refined, &src.ring, &den)?;
    let csv = a.consistency_csv.unwrap_or_else(|| a.out_dir.join("consistency.csv"));
    write_xy_csv(&csv, "images,consistency", [("input", before), ("refined", after)])?;
    println!("consistency {before:.6} -> {after:.6}");
    Ok(())
}

fn reconstruct_cmd(a: ReconstructArgs) -> Result<()> {
    let src = read_ring_dir(&a.views_dir)?;
    let mut cloud = read_ply(&a.in_ply)?;
    let background = rgb(&a.background)?;
    let opts = RenderOptions::default();
    let mut targets = Vec::with_capacity(src.images.len());
    for (entry, img) in src.manifest.views.iter().zip(src.images) {
        let cam: Camera = match entry.camera {
            Some(c) => c,
            None => Framing {
                size: img.width(),
                ..Framing::default()
            }
            .camera(entry.azimuth, 0.0),
        };
        // Without a stored coverage map, crop to where the input cloud lands.
        let alpha = match &entry.alpha {
            Some(f) => Image::read_ppm(a.views_dir.join(f))?,
            None => render(&cloud, &cam, background, &opts)?.alpha,
        };
        targets.push(TargetView::new(cam, img, &alpha, a.margin, a.factor)?);
    }
    let cfg = ReconConfig {
        lambda_l1: a.lambda_l1,
        lambda_perc: a.lambda_perc,
        batch: a.batch,
        steps: a.steps,
        margin: a.margin,
        factor: a.factor,
        background,
        ..ReconConfig::default()
    };
    let log = optimize_stage2(&mut cloud, &targets, &cfg, &opts, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    write_ply(&cloud, &a.out_ply)?;
    if let Some(p) = &a.log_csv {
        write_loss_csv(p, &log)?;
    }
    if let (Some(f), Some(l)) = (log.first(), log.last()) {
        println!("loss {:.6} -> {:.6}", f.loss, l.loss);
    }
    Ok(())
}

fn pipeline_cmd(a: PipelineArgs) -> Result<()> {
    let mut cfg = match (&a.config, a.smoke) {
        (Some(p), _) => RunConfig::read_json(p)?,
        (None, true) => RunConfig::smoke(),
        (None, false) => RunConfig::default(),
    };
    if let Some(o) = a.out {
        cfg.output = o;
    }
    if let Some(s) = a.seed {
        cfg.seeds = Seeds::from_master(s);
    }
    if a.no_vcr {
        cfg.stage2.vcr_enabled = false;
    }
    let m = run_pipeline(&cfg)?;
    println!(
        "{} artifacts in {} ({:.1}s), config {}",
        m.outputs.len(),
        cfg.output.display(),
        m.timings.total_secs,
        m.config_sha256
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("thread count must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::FitSchedule(a) => fit_schedule_cmd(a),
        Command::PlotSchedule(a) => plot_schedule_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Distill(a) => distill_cmd(a),
        Command::Refine(a) => refine_cmd(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
    }
}
