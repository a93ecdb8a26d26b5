//! `evigrid`: rasterize scans, fuse frame windows, evaluate, render and
//! simulate evidential top-view grid maps.

mod commands;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evigrid::io::PointFormat;

use commands::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "evigrid",
    version,
    about = "Evidential top-view grid maps from range-sensor scans"
)]
struct Cli {
    /// Pipeline configuration (TOML); every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rasterize one scan into a single-frame grid map.
    Map(MapArgs),
    /// Fuse a window of frames (scans or frame maps) into a target map.
    Fuse(FuseArgs),
    /// Compare an estimate map against a target map; writes CSV.
    Eval(EvalArgs),
    /// Render one layer as an 8-bit grayscale PNG.
    Render(RenderArgs),
    /// Write simulated scans, poses and ground-truth labels for a preset scene.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct MapArgs {
    /// Point cloud in the sensor frame.
    cloud: PathBuf,
    /// Pose file; the pose nearest to --time (default: the first) is used.
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    time: Option<f64>,
    #[arg(long, default_value = "xyzi_f32")]
    format: PointFormat,
    /// Also write the transmission and observation-height layers needed by `fuse`.
    #[arg(long)]
    with_aux: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FuseArgs {
    /// Frames in time order: point clouds or maps written by `map --with-aux`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Pose file with one pose per input, in the same order.
    #[arg(long)]
    poses: PathBuf,
    /// Reference frame = the pose nearest this time (default: the middle input).
    #[arg(long)]
    reference_time: Option<f64>,
    /// Frames on each side of the reference (overrides the config).
    #[arg(long)]
    k: Option<usize>,
    /// Maximum sensor distance from the reference pose in meters (overrides the config).
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, default_value = "xyzi_f32")]
    format: PointFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    target: PathBuf,
    estimate: PathBuf,
    /// Evaluate only cells where this target layer is > 0.
    #[arg(long, conflicts_with = "loss_mask")]
    mask: Option<String>,
    /// Evaluate only cells with a positive loss weight 1 - k_mask * bel_unknown (target).
    #[arg(long)]
    loss_mask: bool,
    #[arg(long, default_value_t = evigrid::metrics::DEFAULT_MASK_K)]
    k_mask: f64,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    map: PathBuf,
    #[arg(long)]
    layer: String,
    #[arg(long, allow_negative_numbers = true)]
    min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    max: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// One of: static_street, crossing_pedestrian, parking_row.
    preset: String,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long, default_value = "xyzi_f32")]
    format: PointFormat,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = config::PipelineConfig::load(cli.config.as_deref()).map_err(Failure::input)?;
    let threads = evigrid::parallel::threads_from_env().map_err(Failure::input)?;
    evigrid::parallel::with_workers(threads, || match cli.command {
        Command::Map(a) => commands::map(&cfg, &a.cloud, &a.poses, a.time, a.format, a.with_aux, &a.out),
        Command::Fuse(a) => {
            let mut cfg = cfg;
            if let Some(k) = a.k {
                cfg.k = k;
            }
            if let Some(r) = a.radius {
                cfg.fusion.radius = r;
                cfg.validate().map_err(Failure::input)?;
            }
            commands::fuse(&cfg, &a.inputs, &a.poses, a.reference_time, a.format, &a.out)
        }
        Command::Eval(a) => {
            let mask = match (a.mask, a.loss_mask) {
                (Some(layer), _) => commands::Mask::Layer(layer),
                (None, true) => commands::Mask::LossMask(a.k_mask),
                (None, false) => commands::Mask::None,
            };
            commands::eval(&a.target, &a.estimate, &mask, a.out.as_deref())
        }
        Command::Render(a) => commands::render(&cfg, &a.map, &a.layer, a.min, a.max, &a.out),
        Command::Simulate(a) => commands::simulate(&cfg, &a.preset, a.frames, a.format, &a.out),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("evigrid: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
