use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

use evigrid::grid::layers;
use evigrid::io::{
    is_grid_map_file, read_grid_map, read_point_cloud, read_poses, write_grid_map, write_point_cloud, write_poses,
    PointFormat,
};
use evigrid::metrics::{evaluate, loss_mask};
use evigrid::pipeline::{fuse_frames, nearest_pose, rasterize_frames, window_indices};
use evigrid::raster::{rasterize_scan, FrameRaster};
use evigrid::sim::{frame_poses, frame_time, ground_truth_labels, label_map, preset_scene, simulate_scan};
use evigrid::{Error, Layer};

use crate::config::PipelineConfig;
use crate::render::{render_layer, write_png};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_EMPTY_WINDOW: u8 = 3;
pub const EXIT_EVAL_MISMATCH: u8 = 4;
pub const EXIT_RENDER: u8 = 5;

/// A failed command: process exit code plus diagnostic.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, e: impl Display) -> Self {
        Self {
            code,
            message: e.to_string(),
        }
    }
    pub fn input(e: impl Display) -> Self {
        Self::new(EXIT_INPUT, e)
    }
    fn eval(e: impl Display) -> Self {
        Self::new(EXIT_EVAL_MISMATCH, e)
    }
    fn render(e: impl Display) -> Self {
        Self::new(EXIT_RENDER, e)
    }
}

pub fn map(
    cfg: &PipelineConfig,
    cloud_path: &Path,
    poses_path: &Path,
    time: Option<f64>,
    format: PointFormat,
    with_aux: bool,
    out: &Path,
) -> Result<(), Failure> {
    let spec = cfg.grid.spec().map_err(Failure::input)?;
    let poses = read_poses(poses_path).map_err(Failure::input)?;
    let k = match time {
        Some(t) => nearest_pose(&poses, t),
        None => (!poses.is_empty()).then_some(0),
    }
    .ok_or_else(|| Failure::input(format!("{}: no poses", poses_path.display())))?;
    let cloud = read_point_cloud(cloud_path, format).map_err(Failure::input)?;
    if cloud.is_empty() {
        log::warn!(
            "{}: empty point cloud, writing an all-unknown map",
            cloud_path.display()
        );
    }
    let raster = rasterize_scan(&cloud, &poses[k], &spec, &cfg.sensor, &cfg.ground).map_err(Failure::input)?;
    write_grid_map(&raster.to_map(with_aux), out).map_err(Failure::input)
}

fn load_frame(path: &Path, pose: &evigrid::Pose) -> Result<FrameRaster, Failure> {
    let map = read_grid_map(path).map_err(Failure::input)?;
    FrameRaster::from_map(map, *pose).map_err(|e| {
        Failure::input(format!(
            "{}: {e}; frame maps for fusion must be written with `map --with-aux`",
            path.display()
        ))
    })
}

pub fn fuse(
    cfg: &PipelineConfig,
    inputs: &[PathBuf],
    poses_path: &Path,
    reference_time: Option<f64>,
    format: PointFormat,
    out: &Path,
) -> Result<(), Failure> {
    let spec = cfg.grid.spec().map_err(Failure::input)?;
    let poses = read_poses(poses_path).map_err(Failure::input)?;
    if poses.len() != inputs.len() {
        return Err(Failure::input(format!(
            "{} inputs but {} poses in {}",
            inputs.len(),
            poses.len(),
            poses_path.display()
        )));
    }
    let reference = match reference_time {
        Some(t) => nearest_pose(&poses, t).expect("at least one pose"),
        None => inputs.len() / 2,
    };
    let window = window_indices(inputs.len(), reference, cfg.k);

    let mut loaded = Vec::new();
    let mut scans = Vec::new();
    for k in window.clone() {
        if is_grid_map_file(&inputs[k]).map_err(Failure::input)? {
            loaded.push((k, load_frame(&inputs[k], &poses[k])?));
        } else {
            scans.push((read_point_cloud(&inputs[k], format).map_err(Failure::input)?, poses[k]));
        }
    }
    let rasterized = rasterize_frames(&scans, &spec, &cfg.sensor, &cfg.ground).map_err(Failure::input)?;
    let mut rasterized = rasterized.into_iter();
    let mut loaded = loaded.into_iter().peekable();
    let frames: Vec<FrameRaster> = window
        .clone()
        .map(|k| match loaded.next_if(|(i, _)| *i == k) {
            Some((_, frame)) => frame,
            None => rasterized.next().expect("one raster per scan"),
        })
        .collect();
    log::info!("fusing frames {window:?} around frame {reference}");

    let target = fuse_frames(frames, poses[reference], &spec, &cfg.fusion).map_err(|e| match e {
        Error::EmptyWindow { .. } => Failure::new(EXIT_EMPTY_WINDOW, e),
        e => Failure::input(e),
    })?;
    write_grid_map(&target, out).map_err(Failure::input)
}

/// Cell selection for `eval`.
#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    None,
    /// Cells where this target layer is positive.
    Layer(String),
    /// Cells with a positive loss weight `1 - k * bel_unknown` in the target.
    LossMask(f64),
}

pub fn eval(target: &Path, estimate: &Path, mask: &Mask, out: Option<&Path>) -> Result<(), Failure> {
    let target = read_grid_map(target).map_err(Failure::input)?;
    let estimate = read_grid_map(estimate).map_err(Failure::input)?;
    let mask: Option<Layer> = match mask {
        Mask::None => None,
        Mask::Layer(name) => Some(target.require(name).map_err(Failure::eval)?.clone()),
        Mask::LossMask(k) => {
            let unknown = target.require(layers::BEL_UNKNOWN).map_err(Failure::eval)?;
            Some(loss_mask(unknown, *k).map_err(Failure::input)?)
        }
    };
    let report = evaluate(&target, &estimate, mask.as_ref()).map_err(Failure::eval)?;

    let sink: Box<dyn Write> = match out {
        Some(path) => Box::new(std::fs::File::create(path).map_err(|source| {
            Failure::input(Error::Io {
                path: path.to_path_buf(),
                source,
            })
        })?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let write = |w: &mut csv::Writer<Box<dyn Write>>| -> csv::Result<()> {
        w.write_record(evigrid::metrics::EvalReport::CSV_HEADER)?;
        for r in report.rows() {
            w.write_record([r.layer, r.metric.to_string(), r.value.to_string(), r.cells.to_string()])?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(Failure::input)
}

pub fn render(
    cfg: &PipelineConfig,
    map_path: &Path,
    layer: &str,
    min: Option<f64>,
    max: Option<f64>,
    out: &Path,
) -> Result<(), Failure> {
    let map = read_grid_map(map_path).map_err(Failure::input)?;
    let pixels = render_layer(&map, layer, min, max, cfg.render.palette).map_err(Failure::render)?;
    write_png(out, map.spec().width(), map.spec().height(), &pixels).map_err(Failure::render)
}

pub fn simulate(
    cfg: &PipelineConfig,
    preset: &str,
    frames: usize,
    format: PointFormat,
    out: &Path,
) -> Result<(), Failure> {
    let scene = preset_scene(preset).map_err(Failure::input)?;
    let spec = cfg.grid.spec().map_err(Failure::input)?;
    std::fs::create_dir_all(out).map_err(|source| {
        Failure::input(Error::Io {
            path: out.to_path_buf(),
            source,
        })
    })?;
    if frames == 0 {
        log::warn!("frame count 0: writing poses and labels only");
    }
    let poses = frame_poses(&scene, frames, &cfg.scan);
    for (k, pose) in poses.iter().enumerate() {
        let cloud = simulate_scan(&scene, pose, &cfg.scan);
        write_point_cloud(&cloud, out.join(scan_file_name(k)), format).map_err(Failure::input)?;
    }
    write_poses(&poses, out.join("poses.txt")).map_err(Failure::input)?;

    let window = [frame_time(0), frame_time(frames.saturating_sub(1))];
    let labels = ground_truth_labels(&scene, &spec, window);
    let labels = label_map(&spec, &labels).map_err(Failure::input)?;
    write_grid_map(&labels, out.join("labels.egm")).map_err(Failure::input)?;
    scene.write(out.join("scene.toml")).map_err(Failure::input)?;
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|source| Failure::input(Error::Io { path: cfg_path, source }))
}

pub fn scan_file_name(k: usize) -> String {
    format!("scan_{k:04}.bin")
}
