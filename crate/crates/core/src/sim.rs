//! Synthetic scenes, range-sensor scan simulation and ground-truth labels.
//!
//! Scenes hold axis-aligned boxes standing on a planar ground; moving boxes
//! translate at constant velocity. Scans cast a fixed azimuth/elevation ray
//! pattern from the sensor and keep the first hit within range.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{layers, GridSpec, Layer, MultiLayerGridMap, Point, PointCloud, Pose};

/// Frame rate of the simulated sensor.
pub const SCAN_RATE_HZ: f64 = 20.0;
pub const BOX_INTENSITY: f64 = 1.0;
pub const GROUND_INTENSITY: f64 = 0.2;
pub const PRESETS: [&str; 3] = ["static_street", "crossing_pedestrian", "parking_row"];

/// Ground plane `z = a x + b y + c`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundPlane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl GroundPlane {
    pub fn z(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

/// Axis-aligned box; `extent` is the full footprint size, `height` is
/// measured from the ground at the footprint centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticBox {
    pub center: [f64; 2],
    pub extent: [f64; 2],
    pub height: f64,
}

/// Box translating with a constant planar velocity; `center` is its
/// position at time zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingBox {
    pub center: [f64; 2],
    pub extent: [f64; 2],
    pub height: f64,
    pub velocity: [f64; 2],
}

impl MovingBox {
    pub fn at(&self, t: f64) -> StaticBox {
        StaticBox {
            center: [
                self.center[0] + self.velocity[0] * t,
                self.center[1] + self.velocity[1] * t,
            ],
            extent: self.extent,
            height: self.height,
        }
    }
}

/// Constant-velocity ego trajectory of the sensor platform.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoMotion {
    pub start: [f64; 2],
    pub velocity: [f64; 2],
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    /// World rectangle `[min_x, min_y, max_x, max_y]`.
    pub bounds: [f64; 4],
    pub ground: GroundPlane,
    #[serde(default)]
    pub ego: EgoMotion,
    #[serde(default)]
    pub static_boxes: Vec<StaticBox>,
    #[serde(default)]
    pub moving_boxes: Vec<MovingBox>,
}

impl Scene {
    /// Checks extents and that every box stays inside the bounds during `horizon`.
    pub fn validate(&self, horizon: [f64; 2]) -> Result<()> {
        let [x0, y0, x1, y1] = self.bounds;
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::Scene(format!("empty bounds {:?}", self.bounds)));
        }
        let inside = |b: &StaticBox| {
            let (hx, hy) = (0.5 * b.extent[0], 0.5 * b.extent[1]);
            b.center[0] - hx >= x0 && b.center[0] + hx <= x1 && b.center[1] - hy >= y0 && b.center[1] + hy <= y1
        };
        let valid = |b: &StaticBox| b.extent[0] > 0.0 && b.extent[1] > 0.0 && b.height > 0.0;
        for (k, b) in self.static_boxes.iter().enumerate() {
            if !valid(b) || !inside(b) {
                return Err(Error::Scene(format!(
                    "static box {k} is degenerate or outside the bounds"
                )));
            }
        }
        for (k, m) in self.moving_boxes.iter().enumerate() {
            if !valid(&m.at(0.0)) || !inside(&m.at(horizon[0])) || !inside(&m.at(horizon[1])) {
                return Err(Error::Scene(format!(
                    "moving box {k} is degenerate or leaves the bounds during {horizon:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scene(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Scene(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Boxes present at time `t`, static ones first.
    pub fn boxes_at(&self, t: f64) -> impl Iterator<Item = StaticBox> + '_ {
        self.static_boxes
            .iter()
            .copied()
            .chain(self.moving_boxes.iter().map(move |m| m.at(t)))
    }

    pub fn moving_count(&self) -> usize {
        self.moving_boxes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub azimuth_count: usize,
    pub elevation_count: usize,
    /// Lowest and highest elevation angle (degrees).
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub max_range: f64,
    pub sensor_height: f64,
    /// Standard deviation of the range noise along each ray (m).
    pub range_noise: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            azimuth_count: 720,
            elevation_count: 16,
            elevation_min_deg: -15.0,
            elevation_max_deg: 10.0,
            max_range: 70.0,
            sensor_height: 1.8,
            range_noise: 0.01,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.azimuth_count == 0 || self.elevation_count == 0 {
            return Err(Error::InvalidParameter("scan needs at least one ray".into()));
        }
        if !(self.max_range > 0.0 && self.range_noise >= 0.0 && self.elevation_max_deg >= self.elevation_min_deg) {
            return Err(Error::InvalidParameter(format!("invalid scan config {self:?}")));
        }
        Ok(())
    }

    /// Unit ray directions in the sensor frame, azimuth-major.
    pub fn directions(&self) -> Vec<[f64; 3]> {
        let mut dirs = Vec::with_capacity(self.azimuth_count * self.elevation_count);
        for a in 0..self.azimuth_count {
            let az = std::f64::consts::TAU * a as f64 / self.azimuth_count as f64;
            for e in 0..self.elevation_count {
                let frac = if self.elevation_count > 1 {
                    e as f64 / (self.elevation_count - 1) as f64
                } else {
                    0.0
                };
                let el =
                    (self.elevation_min_deg + frac * (self.elevation_max_deg - self.elevation_min_deg)).to_radians();
                dirs.push([el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]);
            }
        }
        dirs
    }
}

/// Timestamp of frame `k`.
pub fn frame_time(k: usize) -> f64 {
    k as f64 / SCAN_RATE_HZ
}

/// Level sensor pose on the ego trajectory at time `t`.
pub fn sensor_pose_at(scene: &Scene, t: f64, cfg: &ScanConfig) -> Pose {
    let e = &scene.ego;
    let x = e.start[0] + e.velocity[0] * t;
    let y = e.start[1] + e.velocity[1] * t;
    Pose::from_yaw(t, [x, y, scene.ground.z(x, y) + cfg.sensor_height], e.yaw)
}

/// Sensor poses of frames `0..count`.
pub fn frame_poses(scene: &Scene, count: usize, cfg: &ScanConfig) -> Vec<Pose> {
    (0..count).map(|k| sensor_pose_at(scene, frame_time(k), cfg)).collect()
}

fn ray_ground(ground: &GroundPlane, s: [f64; 3], d: [f64; 3]) -> Option<f64> {
    let denom = d[2] - ground.a * d[0] - ground.b * d[1];
    let num = ground.z(s[0], s[1]) - s[2];
    let t = num / denom;
    (denom < 0.0 && t > 0.0).then_some(t)
}

/// Entry distance of the ray into a box column closed at the top.
fn ray_box(b: &StaticBox, ground: &GroundPlane, s: [f64; 3], d: [f64; 3]) -> Option<f64> {
    let top = ground.z(b.center[0], b.center[1]) + b.height;
    let lo = [
        b.center[0] - 0.5 * b.extent[0],
        b.center[1] - 0.5 * b.extent[1],
        f64::NEG_INFINITY,
    ];
    let hi = [b.center[0] + 0.5 * b.extent[0], b.center[1] + 0.5 * b.extent[1], top];
    let (mut t_in, mut t_out) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if d[k] == 0.0 {
            if s[k] < lo[k] || s[k] > hi[k] {
                return None;
            }
            continue;
        }
        let (a, b) = ((lo[k] - s[k]) / d[k], (hi[k] - s[k]) / d[k]);
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        t_in = t_in.max(a);
        t_out = t_out.min(b);
    }
    (t_in > 0.0 && t_in <= t_out).then_some(t_in)
}

/// Surface hit first along a world-frame ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hit {
    Ground(f64),
    /// Box index in [`Scene::boxes_at`] order.
    Box(usize, f64),
}

impl Hit {
    pub fn range(&self) -> f64 {
        match *self {
            Hit::Ground(t) | Hit::Box(_, t) => t,
        }
    }
}

/// First intersection of the ray `s + t d` (unit `d`) with the ground or one of `boxes`.
pub fn first_hit(scene: &Scene, boxes: &[StaticBox], s: [f64; 3], d: [f64; 3]) -> Option<Hit> {
    let mut best = ray_ground(&scene.ground, s, d).map(Hit::Ground);
    for (k, b) in boxes.iter().enumerate() {
        if let Some(t) = ray_box(b, &scene.ground, s, d) {
            if best.is_none_or(|h| t < h.range()) {
                best = Some(Hit::Box(k, t));
            }
        }
    }
    best
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn noise_seed(scene: &Scene, timestamp: f64) -> u64 {
    let text = scene.to_toml().unwrap_or_default();
    fnv1a(text.bytes().chain(timestamp.to_bits().to_le_bytes()))
}

/// Simulates one scan at `sensor_pose` (its timestamp places the moving
/// boxes). Points are returned in the sensor frame with the sensor at the
/// origin.
pub fn simulate_scan(scene: &Scene, sensor_pose: &Pose, cfg: &ScanConfig) -> PointCloud {
    let t_scene = sensor_pose.timestamp;
    let boxes: Vec<StaticBox> = scene.boxes_at(t_scene).collect();
    let origin = sensor_pose.translation();
    let to_sensor = sensor_pose.inverse();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(scene, t_scene));
    let noise = (cfg.range_noise > 0.0).then(|| Normal::new(0.0, cfg.range_noise).expect("positive std dev"));

    let mut points = Vec::new();
    for dir in cfg.directions() {
        let d = sensor_pose.rotate(dir);
        let Some(hit) = first_hit(scene, &boxes, origin, d) else {
            continue;
        };
        let t = hit.range();
        if t > cfg.max_range {
            continue;
        }
        let r = match &noise {
            Some(n) => (t + n.sample(&mut rng)).max(0.0),
            None => t,
        };
        let intensity = match hit {
            Hit::Ground(_) => GROUND_INTENSITY,
            Hit::Box(..) => BOX_INTENSITY,
        };
        let p = to_sensor.transform_point([origin[0] + r * d[0], origin[1] + r * d[1], origin[2] + r * d[2]]);
        points.push(Point::new(p[0], p[1], p[2], intensity));
    }
    PointCloud::new(points)
}

/// Ground-truth state of a cell over a time window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Label {
    Unknown = 0,
    Free = 1,
    Occupied = 2,
    Dynamic = 3,
}

impl Label {
    pub fn from_value(v: f32) -> Option<Label> {
        match v {
            0.0 => Some(Label::Unknown),
            1.0 => Some(Label::Free),
            2.0 => Some(Label::Occupied),
            3.0 => Some(Label::Dynamic),
            _ => None,
        }
    }
}

/// Times within `window` at which `c0 + v t` lies within `half` of `p`.
fn axis_cover(c0: f64, v: f64, half: f64, p: f64, window: [f64; 2]) -> Option<[f64; 2]> {
    let (lo, hi) = if v == 0.0 {
        if (c0 - p).abs() <= half {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            return None;
        }
    } else {
        let a = (p - half - c0) / v;
        let b = (p + half - c0) / v;
        (a.min(b), a.max(b))
    };
    let (lo, hi) = (lo.max(window[0]), hi.min(window[1]));
    (lo <= hi).then_some([lo, hi])
}

fn label_at(scene: &Scene, p: [f64; 2], window: [f64; 2]) -> Label {
    let [x0, y0, x1, y1] = scene.bounds;
    if !(p[0] >= x0 && p[0] <= x1 && p[1] >= y0 && p[1] <= y1) {
        return Label::Unknown;
    }
    let covers = |b: &StaticBox| {
        (p[0] - b.center[0]).abs() <= 0.5 * b.extent[0] && (p[1] - b.center[1]).abs() <= 0.5 * b.extent[1]
    };
    if scene.static_boxes.iter().any(covers) {
        return Label::Occupied;
    }
    let mut swept = false;
    for m in &scene.moving_boxes {
        let cx = axis_cover(m.center[0], m.velocity[0], 0.5 * m.extent[0], p[0], window);
        let cy = axis_cover(m.center[1], m.velocity[1], 0.5 * m.extent[1], p[1], window);
        if let (Some(cx), Some(cy)) = (cx, cy) {
            let (lo, hi) = (cx[0].max(cy[0]), cx[1].min(cy[1]));
            if lo <= hi {
                if lo <= window[0] && hi >= window[1] {
                    return Label::Occupied;
                }
                swept = true;
            }
        }
    }
    if swept {
        Label::Dynamic
    } else {
        Label::Free
    }
}

/// Labels of the cells of a world-frame grid over `window = [t0, t1]`.
pub fn ground_truth_labels(scene: &Scene, spec: &GridSpec, window: [f64; 2]) -> Vec<Label> {
    ground_truth_labels_in_frame(scene, spec, &Pose::identity(), window)
}

/// Labels of a grid expressed in the frame of `frame_pose`.
pub fn ground_truth_labels_in_frame(scene: &Scene, spec: &GridSpec, frame_pose: &Pose, window: [f64; 2]) -> Vec<Label> {
    let w = spec.width();
    (0..spec.cell_count())
        .map(|k| {
            let c = spec.center_unchecked(k % w, k / w);
            let p = frame_pose.transform_point([c[0], c[1], 0.0]);
            label_at(scene, [p[0], p[1]], window)
        })
        .collect()
}

/// Single-layer map holding the label codes.
pub fn label_map(spec: &GridSpec, labels: &[Label]) -> Result<MultiLayerGridMap> {
    let values = labels.iter().map(|&l| l as u8 as f32).collect();
    MultiLayerGridMap::with_layers(*spec, vec![Layer::new(layers::LABEL, values)])
}

fn parked_car(x: f64, y: f64) -> StaticBox {
    StaticBox {
        center: [x, y],
        extent: [4.4, 1.8],
        height: 1.5,
    }
}

/// Named deterministic scenes.
pub fn preset_scene(name: &str) -> Result<Scene> {
    let bounds = [-60.0, -25.0, 80.0, 25.0];
    let walls = [12.5, -12.5].map(|y| StaticBox {
        center: [10.0, y],
        extent: [100.0, 0.5],
        height: 6.0,
    });
    match name {
        "static_street" => {
            let mut boxes = walls.to_vec();
            for x in [-22.0, -14.0, -4.0, 9.0, 17.0, 26.0] {
                boxes.push(parked_car(x, 4.5));
            }
            for x in [-18.0, -9.0, 5.0, 13.0, 30.0] {
                boxes.push(parked_car(x, -4.5));
            }
            for x in (-30..=40).step_by(10) {
                boxes.push(StaticBox {
                    center: [x as f64, 7.5],
                    extent: [0.3, 0.3],
                    height: 4.0,
                });
            }
            Ok(Scene {
                bounds,
                ground: GroundPlane {
                    a: 0.004,
                    b: -0.002,
                    c: 0.0,
                },
                ego: EgoMotion {
                    start: [-4.0, 0.0],
                    velocity: [8.0, 0.0],
                    yaw: 0.0,
                },
                static_boxes: boxes,
                moving_boxes: Vec::new(),
            })
        }
        "crossing_pedestrian" => {
            let mut boxes = walls.to_vec();
            for x in [-15.0, 16.0] {
                boxes.push(parked_car(x, 4.5));
                boxes.push(parked_car(x + 3.0, -4.5));
            }
            Ok(Scene {
                bounds,
                ground: GroundPlane::default(),
                ego: EgoMotion {
                    start: [0.0, 0.0],
                    velocity: [1.0, 0.0],
                    yaw: 0.0,
                },
                static_boxes: boxes,
                moving_boxes: vec![MovingBox {
                    center: [6.0, -1.5],
                    extent: [0.5, 0.5],
                    height: 1.7,
                    velocity: [0.0, 1.4],
                }],
            })
        }
        "parking_row" => {
            let mut boxes = Vec::new();
            for k in 0..10 {
                let x = -20.0 + 2.8 * k as f64;
                for y in [6.0, -6.0] {
                    boxes.push(StaticBox {
                        center: [x, y],
                        extent: [1.9, 4.6],
                        height: 1.6,
                    });
                }
            }
            Ok(Scene {
                bounds,
                ground: GroundPlane {
                    a: 0.0,
                    b: 0.003,
                    c: 0.0,
                },
                ego: EgoMotion {
                    start: [-10.0, 0.0],
                    velocity: [3.0, 0.0],
                    yaw: 0.0,
                },
                static_boxes: boxes,
                moving_boxes: vec![MovingBox {
                    center: [12.0, -1.5],
                    extent: [4.4, 1.8],
                    height: 1.5,
                    velocity: [-2.0, 0.0],
                }],
            })
        }
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}
