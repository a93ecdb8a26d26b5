//! Single-scan rasterization into a multi-layer grid with sensor masses.
//!
//! Each non-ground return adds a reflection to its cell. Every return, ground
//! or not, casts a ray from the sensor origin whose traversed cells (all but
//! the endpoint cell) receive a transmission and update the band of heights
//! observed through the cell. The masses per cell follow the inverse sensor
//! model
//!
//! ```text
//! m(O) = p_fn^m (1 - p_fp^n)
//! m(F) = p_fp^n (1 - p_fn^m)
//! m(U) = 1 - m(O) - m(F)
//! ```
//!
//! with a false-negative probability that grows with distance and with
//! occlusion of the relevant height band.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{layers, CellEvidence, CellIndex, GridSpec, Layer, MultiLayerGridMap, PointCloud, Pose};
use crate::ground::{fit_ground, Classification, GroundFitConfig, GroundSurface};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModelConfig {
    /// False-positive probability per reflection.
    pub p_fp: f64,
    /// Lower bound of the false-negative probability, reached for a nearby
    /// cell whose full relevant height band was observed.
    pub p_fn_max: f64,
    /// Distance at which a transmission carries no free-space evidence (m).
    pub max_range: f64,
    /// Height band above ground that matters for occupancy (m).
    pub relevant_height: f64,
}

impl Default for SensorModelConfig {
    fn default() -> Self {
        Self {
            p_fp: 0.1,
            p_fn_max: 0.9,
            max_range: 70.0,
            relevant_height: 3.0,
        }
    }
}

impl SensorModelConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.p_fp) || !open_unit(self.p_fn_max) {
            return Err(Error::InvalidParameter(format!(
                "p_fp and p_fn_max must lie in (0, 1), got {} and {}",
                self.p_fp, self.p_fn_max
            )));
        }
        if !(self.max_range > 0.0 && self.relevant_height > 0.0) {
            return Err(Error::InvalidParameter(
                "max_range and relevant_height must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `p_FN = 1 - (1 - r_x) r_z (1 - p_fn_max)` with both ratios clamped to `[0, 1]`.
#[inline]
pub fn false_negative_prob(r_x: f64, r_z: f64, p_fn_max: f64) -> f64 {
    let r_x = if r_x.is_nan() { 1.0 } else { r_x.clamp(0.0, 1.0) };
    let r_z = if r_z.is_nan() { 0.0 } else { r_z.clamp(0.0, 1.0) };
    // the clamp only absorbs rounding, so both endpoints come out exact
    (1.0 - (1.0 - r_x) * r_z * (1.0 - p_fn_max)).max(p_fn_max)
}

/// Masses for `transmissions` pass-throughs and `reflections` returns.
///
/// Obstacle evidence maps to `occupied`, ground evidence to `free`.
#[inline]
pub fn sensor_bba(transmissions: u32, reflections: u32, p_fn: f64, p_fp: f64) -> CellEvidence {
    let fn_m = p_fn.powi(transmissions.min(i32::MAX as u32) as i32);
    let fp_n = p_fp.powi(reflections.min(i32::MAX as u32) as i32);
    let occupied = fn_m * (1.0 - fp_n);
    let free = fp_n * (1.0 - fn_m);
    let ev = CellEvidence {
        occupied,
        free,
        unknown: 1.0 - occupied - free,
    };
    ev.debug_check();
    ev
}

/// Visits every cell crossed by the horizontal projection of the segment
/// `origin -> end`, excluding the cell containing `end`, and reports the
/// segment height at the midpoint of the portion inside each cell.
///
/// The segment is clipped to the grid rectangle first. Cells touched only at
/// a corner (zero-length passage) are skipped.
pub fn for_each_transmission<F: FnMut(usize, f64)>(spec: &GridSpec, origin: [f64; 3], end: [f64; 3], mut visit: F) {
    let cs = spec.cell_size();
    let [ox, oy] = spec.origin();
    let (w, h) = (spec.width(), spec.height());
    let ax = (origin[0] - ox) / cs;
    let ay = (origin[1] - oy) / cs;
    let dx = (end[0] - ox) / cs - ax;
    let dy = (end[1] - oy) / cs - ay;
    if dx == 0.0 && dy == 0.0 {
        return;
    }

    // Liang-Barsky clip against [0, w] x [0, h]
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [(-dx, ax), (dx, w as f64 - ax), (-dy, ay), (dy, h as f64 - ay)] {
        if p == 0.0 {
            if q < 0.0 {
                return;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                if r > t1 {
                    return;
                }
                t0 = t0.max(r);
            } else {
                if r < t0 {
                    return;
                }
                t1 = t1.min(r);
            }
        }
    }
    if t0 >= t1 {
        return;
    }

    let end_cell = spec.world_to_cell([end[0], end[1]]).map(|c| spec.linear(c));
    let clamp_index = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
    let i = clamp_index(ax + t0 * dx, w);
    let j = clamp_index(ay + t0 * dy, h);
    // per-axis step budgets keep the walk inside the clipped segment's cells
    let mut steps_x = clamp_index(ax + t1 * dx, w).abs_diff(i);
    let mut steps_y = clamp_index(ay + t1 * dy, h).abs_diff(j);

    let (stride_x, delta_x, mut t_max_x) = if dx > 0.0 {
        (1isize, 1.0 / dx, (i as f64 + 1.0 - ax) / dx)
    } else if dx < 0.0 {
        (-1, -1.0 / dx, (i as f64 - ax) / dx)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    };
    let (stride_y, delta_y, mut t_max_y) = if dy > 0.0 {
        (w as isize, 1.0 / dy, (j as f64 + 1.0 - ay) / dy)
    } else if dy < 0.0 {
        (-(w as isize), -1.0 / dy, (j as f64 - ay) / dy)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    };

    let (z0, half_dz) = (origin[2], 0.5 * (end[2] - origin[2]));
    let mut idx = j * w + i;
    let mut t_enter = t0;
    while steps_x + steps_y > 0 {
        let along_x = steps_y == 0 || (steps_x > 0 && t_max_x < t_max_y);
        let t_exit = if along_x { t_max_x } else { t_max_y }.min(t1);
        if t_exit > t_enter {
            visit(idx, z0 + (t_enter + t_exit) * half_dz);
        }
        t_enter = t_exit;
        if along_x {
            idx = idx.wrapping_add_signed(stride_x);
            t_max_x += delta_x;
            steps_x -= 1;
        } else {
            idx = idx.wrapping_add_signed(stride_y);
            t_max_y += delta_y;
            steps_y -= 1;
        }
    }
    if end_cell != Some(idx) && t1 > t_enter {
        visit(idx, z0 + (t_enter + t1) * half_dz);
    }
}

/// Transmission cells of one ray with the interpolated segment height in each.
pub fn traverse_ray(spec: &GridSpec, origin: [f64; 3], end: [f64; 3]) -> Vec<(CellIndex, f64)> {
    let mut out = Vec::new();
    for_each_transmission(spec, origin, end, |idx, z| out.push((spec.unlinear(idx), z)));
    out
}

/// Layers carried by a [`FrameRaster`], in storage order.
pub const FRAME_LAYERS: [&str; 10] = [
    layers::REFLECTIONS,
    layers::OBSERVATIONS,
    layers::REFLECTED_ENERGY,
    layers::HEIGHT,
    layers::SHADOW_HEIGHT,
    layers::M_OCCUPIED,
    layers::M_FREE,
    layers::M_UNKNOWN,
    layers::TRANSMISSIONS,
    layers::OBSERVATION_HEIGHT,
];

/// One rasterized scan in its own sensor-aligned grid.
///
/// Holds the input layers, the masses, the transmission count and the
/// maximum observable height per cell. Unobserved cells hold zeros and the
/// all-unknown mass triple.
#[derive(Debug, Clone)]
pub struct FrameRaster {
    map: MultiLayerGridMap,
    sensor_pose: Pose,
}

impl FrameRaster {
    /// Wraps a map holding every layer in [`FRAME_LAYERS`].
    pub fn from_map(map: MultiLayerGridMap, sensor_pose: Pose) -> Result<Self> {
        for name in FRAME_LAYERS {
            map.require(name)?;
        }
        Ok(Self { map, sensor_pose })
    }

    /// All-unknown raster with zero counts.
    pub fn unobserved(spec: GridSpec, sensor_pose: Pose) -> Self {
        let n = spec.cell_count();
        let layers = FRAME_LAYERS
            .iter()
            .map(|name| Layer::filled(*name, n, if *name == layers::M_UNKNOWN { 1.0 } else { 0.0 }))
            .collect();
        Self {
            map: MultiLayerGridMap::with_layers(spec, layers).expect("frame layer names are unique"),
            sensor_pose,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        self.map.spec()
    }
    pub fn sensor_pose(&self) -> &Pose {
        &self.sensor_pose
    }
    pub fn map(&self) -> &MultiLayerGridMap {
        &self.map
    }

    pub fn layer(&self, name: &str) -> &[f32] {
        &self
            .map
            .layer(name)
            .expect("frame raster carries all frame layers")
            .values
    }

    pub(crate) fn layer_mut(&mut self, name: &str) -> &mut [f32] {
        &mut self
            .map
            .layer_mut(name)
            .expect("frame raster carries all frame layers")
            .values
    }

    pub fn reflections(&self) -> &[f32] {
        self.layer(layers::REFLECTIONS)
    }
    pub fn transmissions(&self) -> &[f32] {
        self.layer(layers::TRANSMISSIONS)
    }
    pub fn observations(&self) -> &[f32] {
        self.layer(layers::OBSERVATIONS)
    }
    pub fn reflected_energy(&self) -> &[f32] {
        self.layer(layers::REFLECTED_ENERGY)
    }
    /// Maximum reflection height above ground.
    pub fn height(&self) -> &[f32] {
        self.layer(layers::HEIGHT)
    }
    pub fn shadow_height(&self) -> &[f32] {
        self.layer(layers::SHADOW_HEIGHT)
    }
    /// Maximum height above ground observed by a passing ray.
    pub fn observation_height(&self) -> &[f32] {
        self.layer(layers::OBSERVATION_HEIGHT)
    }

    /// Mass triple of the cell at linear index `idx`. The unknown mass is
    /// recomputed from the stored single-precision masses.
    pub fn evidence(&self, idx: usize) -> CellEvidence {
        CellEvidence::from_masses(
            self.layer(layers::M_OCCUPIED)[idx] as f64,
            self.layer(layers::M_FREE)[idx] as f64,
        )
    }

    /// Map with the input layers and masses, optionally with the two extra
    /// layers needed to fuse the frame after reloading it.
    pub fn to_map(&self, with_aux: bool) -> MultiLayerGridMap {
        let keep = if with_aux { FRAME_LAYERS.len() } else { 8 };
        let layers = FRAME_LAYERS[..keep]
            .iter()
            .map(|n| self.map.layer(n).expect("frame layer present").clone())
            .collect();
        MultiLayerGridMap::with_layers(*self.map.spec(), layers).expect("unique frame layers")
    }

    pub fn into_map(self) -> MultiLayerGridMap {
        self.map
    }
}

/// Rasterizes a classified scan given in the sensor frame into `spec`,
/// which is expressed in the same frame.
pub fn rasterize_frame(
    cloud: &PointCloud,
    pose: &Pose,
    ground: &GroundSurface,
    classes: &Classification,
    spec: &GridSpec,
    cfg: &SensorModelConfig,
) -> Result<FrameRaster> {
    cfg.validate()?;
    if classes.is_ground.len() != cloud.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} ground flags for {} points",
            classes.is_ground.len(),
            cloud.len()
        )));
    }
    let cells = spec.cell_count();
    let width = spec.width();
    let dz_rel = cfg.relevant_height;

    // per-cell ray state packed together so each traversal step touches one cache line
    #[derive(Clone, Copy)]
    struct RayCell {
        ground: f32,
        shadow: f32,
        obs: f32,
        trans: u32,
    }
    let xs: Vec<f64> = (0..width).map(|i| spec.center_unchecked(i, 0)[0]).collect();
    let ys: Vec<f64> = (0..spec.height()).map(|j| spec.center_unchecked(0, j)[1]).collect();
    let mut ray_cells: Vec<RayCell> = ground
        .eval_lattice(&xs, &ys)
        .into_iter()
        .map(|g| RayCell {
            ground: g as f32,
            shadow: f32::INFINITY,
            obs: f32::NEG_INFINITY,
            trans: 0,
        })
        .collect();

    let mut refl = vec![0u32; cells];
    let mut energy = vec![0.0f64; cells];
    let mut det = vec![f64::NEG_INFINITY; cells];

    let origin = cloud.sensor_origin;
    for (p, &is_ground) in cloud.points.iter().zip(&classes.is_ground) {
        if !is_ground {
            if let Some(c) = spec.world_to_cell([p.x, p.y]) {
                let idx = spec.linear(c);
                refl[idx] += 1;
                energy[idx] += p.intensity;
                det[idx] = det[idx].max(p.z - ground.eval(p.x, p.y));
            }
        }
        for_each_transmission(spec, origin, [p.x, p.y, p.z], |idx, z| {
            let cell = &mut ray_cells[idx];
            cell.trans += 1;
            let passage = ((z - cell.ground as f64).clamp(0.0, dz_rel)) as f32;
            cell.shadow = cell.shadow.min(passage);
            cell.obs = cell.obs.max(passage);
        });
    }
    let mut out: Vec<Vec<f32>> = FRAME_LAYERS
        .iter()
        .map(|name| vec![if *name == layers::M_UNKNOWN { 1.0 } else { 0.0 }; cells])
        .collect();
    let [sx, sy, _] = origin;
    for (idx, rc) in ray_cells.iter().enumerate() {
        let (n, m) = (refl[idx], rc.trans);
        if n == 0 && m == 0 {
            continue;
        }
        let c = spec.center_unchecked(idx % width, idx / width);
        let r_x = (c[0] - sx).hypot(c[1] - sy) / cfg.max_range;
        let band = if m > 0 { rc.obs as f64 - rc.shadow as f64 } else { 0.0 };
        let p_fn = false_negative_prob(r_x, band / dz_rel, cfg.p_fn_max);
        let ev = sensor_bba(m, n, p_fn, cfg.p_fp);

        out[0][idx] = n as f32;
        out[1][idx] = 1.0;
        if n > 0 {
            out[2][idx] = (energy[idx] / n as f64) as f32;
            out[3][idx] = det[idx].max(0.0) as f32;
        }
        if m > 0 {
            out[4][idx] = rc.shadow;
            out[9][idx] = rc.obs;
        }
        out[5][idx] = ev.occupied as f32;
        out[6][idx] = ev.free as f32;
        out[7][idx] = ev.unknown as f32;
        out[8][idx] = m as f32;
    }
    let layers = FRAME_LAYERS
        .iter()
        .zip(out)
        .map(|(name, values)| Layer::new(*name, values))
        .collect();
    let map = MultiLayerGridMap::with_layers(*spec, layers)?;
    Ok(FrameRaster {
        map,
        sensor_pose: *pose,
    })
}

/// Fits the ground, classifies the returns and rasterizes the scan.
///
/// Scans too sparse for a surface fit fall back to a flat ground at the
/// lowest return, with every return treated as an obstacle reflection.
pub fn rasterize_scan(
    cloud: &PointCloud,
    pose: &Pose,
    spec: &GridSpec,
    sensor: &SensorModelConfig,
    ground: &GroundFitConfig,
) -> Result<FrameRaster> {
    ground.validate()?;
    let (surface, classes) = match fit_ground(cloud, ground) {
        Ok(surface) => {
            let classes = Classification::new(cloud, &surface, ground.classify_threshold);
            (surface, classes)
        }
        Err(err @ (Error::EmptyInput(_) | Error::DegenerateFit(_))) => {
            if !cloud.is_empty() {
                log::warn!("ground fit failed ({err}); using a flat ground below the scan");
            }
            let z = cloud.points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
            let z = if z.is_finite() { z } else { 0.0 };
            let b = spec.bounds();
            let surface = GroundSurface::flat(z, [b[0], b[1]], [b[2], b[3]], ground.knot_spacing)?;
            (surface, Classification::all_non_ground(cloud.len()))
        }
        Err(err) => return Err(err),
    };
    rasterize_frame(cloud, pose, &surface, &classes, spec, sensor)
}
