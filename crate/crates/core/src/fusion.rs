//! Temporal evidential fusion of single-frame rasters into a target map.
//!
//! Per cell, each frame contributes a mass triple over {occupied}, {free}
//! and {occupied, free}. Assuming independent cell states over time, the
//! joint mass of a sequence of per-frame hypotheses is the product of the
//! per-frame masses. Sequences with at least one free and no occupied
//! component support "free", the mirror case supports "occupied", and every
//! other sequence (contradictions and the all-unknown sequence) is routed to
//! the unknown belief. Summing the classes collapses to
//!
//! ```text
//! bel(occupied) = prod(m_o + m_u) - prod(m_u)
//! bel(free)     = prod(m_f + m_u) - prod(m_u)
//! bel(unknown)  = 1 - bel(occupied) - bel(free)
//! ```
//!
//! Obstacle heights are fused as a product of normal densities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{layers, CellEvidence, GridSpec, Layer, MultiLayerGridMap, Pose};
use crate::raster::{FrameRaster, FRAME_LAYERS};

/// Largest window the enumeration oracle accepts (3^12 hypotheses).
pub const BRUTE_FORCE_MAX_FRAMES: usize = 12;
/// Default fusion radius around the reference pose (m).
pub const DEFAULT_RADIUS: f64 = 40.0;
/// Default lower bound for per-frame height variances.
pub const DEFAULT_SIGMA_MIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Frames whose sensor lies farther than this from the reference pose are dropped (m).
    pub radius: f64,
    /// Lower clamp for per-frame height variances.
    pub sigma_min: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            sigma_min: DEFAULT_SIGMA_MIN,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.sigma_min > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid fusion config {self:?}")));
        }
        Ok(())
    }
}

/// Fused beliefs of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedBelief {
    pub occupied: f64,
    pub free: f64,
    /// Unknown plus contradictory (dynamic) mass.
    pub unknown: f64,
}

impl FusedBelief {
    pub const UNKNOWN: FusedBelief = FusedBelief {
        occupied: 0.0,
        free: 0.0,
        unknown: 1.0,
    };

    pub fn from_beliefs(occupied: f64, free: f64) -> Self {
        Self {
            occupied,
            free,
            unknown: (1.0 - occupied - free).max(0.0),
        }
    }
}

/// Running products for the closed-form combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefAccumulator {
    occupied_or_unknown: f64,
    free_or_unknown: f64,
    unknown: f64,
}

impl Default for BeliefAccumulator {
    fn default() -> Self {
        Self {
            occupied_or_unknown: 1.0,
            free_or_unknown: 1.0,
            unknown: 1.0,
        }
    }
}

impl BeliefAccumulator {
    #[inline]
    pub fn push(&mut self, ev: &CellEvidence) {
        self.occupied_or_unknown *= ev.occupied + ev.unknown;
        self.free_or_unknown *= ev.free + ev.unknown;
        self.unknown *= ev.unknown;
    }

    #[inline]
    pub fn finish(&self) -> FusedBelief {
        FusedBelief::from_beliefs(
            (self.occupied_or_unknown - self.unknown).max(0.0),
            (self.free_or_unknown - self.unknown).max(0.0),
        )
    }
}

/// Closed-form temporal combination of per-frame masses.
pub fn fuse_cell_evidence(masses: &[CellEvidence]) -> Result<FusedBelief> {
    if masses.is_empty() {
        return Err(Error::EmptyInput("evidence sequence"));
    }
    let mut acc = BeliefAccumulator::default();
    for ev in masses {
        acc.push(ev);
    }
    Ok(acc.finish())
}

/// Same contract as [`fuse_cell_evidence`], computed by enumerating every
/// sequence of per-frame hypotheses and summing the masses per class.
pub fn fuse_cell_evidence_bruteforce(masses: &[CellEvidence]) -> Result<FusedBelief> {
    let n = masses.len();
    if n == 0 {
        return Err(Error::EmptyInput("evidence sequence"));
    }
    if n > BRUTE_FORCE_MAX_FRAMES {
        return Err(Error::EnumerationTooLarge(n));
    }
    let (mut occupied, mut free, mut dynamic) = (0.0, 0.0, 0.0);
    let mut states = vec![0u8; n];
    for code in 0..3usize.pow(n as u32) {
        let mut rest = code;
        for s in states.iter_mut() {
            *s = (rest % 3) as u8;
            rest /= 3;
        }
        let mut mass = 1.0;
        let (mut any_o, mut any_f) = (false, false);
        for (ev, &s) in masses.iter().zip(&states) {
            mass *= match s {
                0 => {
                    any_o = true;
                    ev.occupied
                }
                1 => {
                    any_f = true;
                    ev.free
                }
                _ => ev.unknown,
            };
        }
        match (any_o, any_f) {
            (true, false) => occupied += mass,
            (false, true) => free += mass,
            _ => dynamic += mass,
        }
    }
    Ok(FusedBelief {
        occupied,
        free,
        unknown: dynamic,
    })
}

/// Normal height estimate of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightEstimate {
    pub mu: f64,
    /// Variance as stored per frame (height difference, in m).
    pub sigma_sq: f64,
}

impl HeightEstimate {
    /// Estimate from the maximum observable and maximum detected heights.
    ///
    /// A reflection bounds the observed column from below, so the observable
    /// height is raised to at least the detected height.
    pub fn from_heights(max_observable: f64, max_detected: f64, sigma_min: f64) -> Self {
        let observable = max_observable.max(max_detected);
        Self {
            mu: 0.5 * (observable + max_detected),
            sigma_sq: (observable - max_detected).max(sigma_min),
        }
    }
}

/// Product of normal densities: precision-weighted mean, summed precision.
pub fn fuse_height(estimates: &[HeightEstimate], sigma_min: f64) -> Result<HeightEstimate> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput("height estimates"));
    }
    let (mut precision, mut weighted) = (0.0, 0.0);
    for e in estimates {
        let var = e.sigma_sq.max(sigma_min);
        precision += 1.0 / var;
        weighted += e.mu / var;
    }
    let sigma_sq = 1.0 / precision;
    Ok(HeightEstimate {
        mu: weighted * sigma_sq,
        sigma_sq,
    })
}

/// Frames selected for one target map.
#[derive(Debug, Clone)]
pub struct FusionWindow {
    frames: Vec<FrameRaster>,
    reference_pose: Pose,
    radius: f64,
}

impl FusionWindow {
    /// Keeps the frames whose sensor lies within `radius` (horizontal
    /// distance) of the reference pose.
    pub fn new(frames: Vec<FrameRaster>, reference_pose: Pose, radius: f64) -> Result<Self> {
        let total = frames.len();
        let frames: Vec<_> = frames
            .into_iter()
            .filter(|f| f.sensor_pose().horizontal_distance(&reference_pose) <= radius)
            .collect();
        if frames.is_empty() {
            return Err(Error::EmptyWindow { radius });
        }
        if frames.len() < total {
            log::info!(
                "{} of {total} frames outside the {radius} m fusion radius",
                total - frames.len()
            );
        }
        Ok(Self {
            frames,
            reference_pose,
            radius,
        })
    }

    pub fn frames(&self) -> &[FrameRaster] {
        &self.frames
    }
    pub fn reference_pose(&self) -> &Pose {
        &self.reference_pose
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn len(&self) -> usize {
        self.frames.len()
    }
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Maps reference cells to source-frame cells by transforming reference cell
/// centres and taking the nearest source cell.
#[derive(Debug, Clone, Copy)]
struct CellMapping<'a> {
    src_spec: &'a GridSpec,
    ref_spec: &'a GridSpec,
    ref_to_src: Pose,
}

impl<'a> CellMapping<'a> {
    fn new(src_spec: &'a GridSpec, src_pose: &Pose, ref_spec: &'a GridSpec, ref_pose: &Pose) -> Self {
        let inv = src_pose.inverse();
        // compose src^-1 * ref as a single pose
        let rt = ref_pose.translation();
        let t = inv.transform_point(rt);
        let [aw, ax, ay, az] = inv.rotation();
        let [bw, bx, by, bz] = ref_pose.rotation();
        let q = [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ref_to_src = Pose::new(ref_pose.timestamp, t, q.map(|v| v / n)).expect("composition of unit quaternions");
        Self {
            src_spec,
            ref_spec,
            ref_to_src,
        }
    }

    #[inline]
    fn source(&self, ref_idx: usize) -> Option<usize> {
        let w = self.ref_spec.width();
        let c = self.ref_spec.center_unchecked(ref_idx % w, ref_idx / w);
        let p = self.ref_to_src.transform_point([c[0], c[1], 0.0]);
        self.src_spec
            .world_to_cell([p[0], p[1]])
            .map(|cell| self.src_spec.linear(cell))
    }
}

/// Nearest-neighbour resampling of a frame into the reference grid. Cells
/// that fall outside the source grid become unobserved.
pub fn resample_to_reference(raster: &FrameRaster, ref_spec: &GridSpec, ref_pose: &Pose) -> FrameRaster {
    let mapping = CellMapping::new(raster.spec(), raster.sensor_pose(), ref_spec, ref_pose);
    let sources: Vec<Option<usize>> = (0..ref_spec.cell_count())
        .into_par_iter()
        .map(|k| mapping.source(k))
        .collect();
    let mut out = FrameRaster::unobserved(*ref_spec, *raster.sensor_pose());
    for name in FRAME_LAYERS {
        let src = raster.layer(name);
        let dst = out.layer_mut(name);
        for (d, s) in dst.iter_mut().zip(&sources) {
            if let Some(s) = *s {
                *d = src[s];
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct CellAccumulator {
    beliefs: BeliefAccumulator,
    reflections: f64,
    energy: f64,
    precision: f64,
    weighted_height: f64,
    observation_height: f32,
}

impl Default for CellAccumulator {
    fn default() -> Self {
        Self {
            beliefs: BeliefAccumulator::default(),
            reflections: 0.0,
            energy: 0.0,
            precision: 0.0,
            weighted_height: 0.0,
            observation_height: f32::NEG_INFINITY,
        }
    }
}

struct FrameView<'a> {
    m_occupied: &'a [f32],
    m_free: &'a [f32],
    reflections: &'a [f32],
    transmissions: &'a [f32],
    energy: &'a [f32],
    height: &'a [f32],
    observation_height: &'a [f32],
}

impl<'a> FrameView<'a> {
    fn new(f: &'a FrameRaster) -> Self {
        Self {
            m_occupied: f.layer(layers::M_OCCUPIED),
            m_free: f.layer(layers::M_FREE),
            reflections: f.reflections(),
            transmissions: f.transmissions(),
            energy: f.reflected_energy(),
            height: f.height(),
            observation_height: f.observation_height(),
        }
    }
}

impl CellAccumulator {
    #[inline]
    fn add(&mut self, frame: &FrameView<'_>, s: usize, sigma_min: f64) {
        let ev = CellEvidence::from_masses(frame.m_occupied[s] as f64, frame.m_free[s] as f64);
        self.beliefs.push(&ev);
        let n = frame.reflections[s] as f64;
        if n > 0.0 {
            self.reflections += n;
            self.energy += n * frame.energy[s] as f64;
            let est =
                HeightEstimate::from_heights(frame.observation_height[s] as f64, frame.height[s] as f64, sigma_min);
            self.precision += 1.0 / est.sigma_sq;
            self.weighted_height += est.mu / est.sigma_sq;
        }
        if frame.transmissions[s] > 0.0 {
            self.observation_height = self.observation_height.max(frame.observation_height[s]);
        }
    }
}

/// Fuses a window into the target layers over `ref_spec`, expressed in the
/// reference pose's frame. Uses the ambient rayon pool.
pub fn build_target_map(window: &FusionWindow, ref_spec: &GridSpec, cfg: &FusionConfig) -> Result<MultiLayerGridMap> {
    cfg.validate()?;
    let cells = ref_spec.cell_count();
    let mut acc = vec![CellAccumulator::default(); cells];
    const CHUNK: usize = 4096;
    for frame in window.frames() {
        let mapping = CellMapping::new(frame.spec(), frame.sensor_pose(), ref_spec, window.reference_pose());
        let view = FrameView::new(frame);
        acc.par_chunks_mut(CHUNK).enumerate().for_each(|(chunk, cells)| {
            let base = chunk * CHUNK;
            for (k, cell) in cells.iter_mut().enumerate() {
                if let Some(s) = mapping.source(base + k) {
                    cell.add(&view, s, cfg.sigma_min);
                }
            }
        });
    }

    let mut out: Vec<Vec<f32>> = vec![vec![0.0; cells]; layers::TARGET.len()];
    let mut columns: Vec<&mut [f32]> = out.iter_mut().map(|v| v.as_mut_slice()).collect();
    let [refl, obs_h, energy, height, bel_f, bel_o, bel_u] = columns.as_mut_slice() else {
        unreachable!("target schema has seven layers");
    };
    for (k, a) in acc.iter().enumerate() {
        let bel = a.beliefs.finish();
        refl[k] = a.reflections as f32;
        if a.observation_height.is_finite() {
            obs_h[k] = a.observation_height;
        }
        if a.reflections > 0.0 {
            energy[k] = (a.energy / a.reflections) as f32;
            height[k] = (a.weighted_height / a.precision) as f32;
        }
        bel_f[k] = bel.free as f32;
        bel_o[k] = bel.occupied as f32;
        bel_u[k] = bel.unknown as f32;
    }
    let layers = layers::TARGET
        .iter()
        .zip(out)
        .map(|(name, values)| Layer::new(*name, values))
        .collect();
    MultiLayerGridMap::with_layers(*ref_spec, layers)
}

/// [`build_target_map`] on a dedicated pool of `threads` workers (0 = auto).
pub fn build_target_map_with_threads(
    window: &FusionWindow,
    ref_spec: &GridSpec,
    cfg: &FusionConfig,
    threads: usize,
) -> Result<MultiLayerGridMap> {
    crate::parallel::with_workers(threads, || build_target_map(window, ref_spec, cfg))
}

/// Reads the three belief layers of a target-schema map.
pub fn beliefs_from_map(map: &MultiLayerGridMap) -> Result<Vec<FusedBelief>> {
    let o = &map.require(layers::BEL_OCCUPIED)?.values;
    let f = &map.require(layers::BEL_FREE)?.values;
    let u = &map.require(layers::BEL_UNKNOWN)?.values;
    Ok(o.iter()
        .zip(f)
        .zip(u)
        .map(|((&o, &f), &u)| FusedBelief {
            occupied: o as f64,
            free: f as f64,
            unknown: u as f64,
        })
        .collect())
}
