//! Grid geometry, layer containers, poses and the per-cell evidence triple.
//!
//! Cells are addressed as `(i, j)` = (x column, y row). Layer values are
//! stored row-major with row 0 at the minimum y of the grid.

use crate::error::{Error, Result};

/// Default cell edge length in meters.
pub const DEFAULT_CELL_SIZE: f64 = 0.15;
/// Default number of cells per axis; covers a 40 m radius with margin.
pub const DEFAULT_CELLS_PER_AXIS: usize = 536;
/// Default lower-left corner relative to the reference pose.
pub const DEFAULT_ORIGIN: f64 = -40.2;

/// Tolerance for the evidence mass-sum invariant.
pub const MASS_SUM_TOLERANCE: f64 = 1e-9;
/// Tolerance for unit quaternions accepted by [`Pose::new`].
pub const QUATERNION_TOLERANCE: f64 = 1e-9;

/// Canonical layer names.
pub mod layers {
    pub const REFLECTIONS: &str = "reflections";
    pub const TRANSMISSIONS: &str = "transmissions";
    pub const OBSERVATIONS: &str = "observations";
    pub const REFLECTED_ENERGY: &str = "reflected_energy";
    pub const HEIGHT: &str = "height";
    pub const SHADOW_HEIGHT: &str = "shadow_height";
    pub const OBSERVATION_HEIGHT: &str = "observation_height";
    pub const M_OCCUPIED: &str = "m_occupied";
    pub const M_FREE: &str = "m_free";
    pub const M_UNKNOWN: &str = "m_unknown";
    pub const BEL_FREE: &str = "bel_free";
    pub const BEL_OCCUPIED: &str = "bel_occupied";
    pub const BEL_UNKNOWN: &str = "bel_unknown";
    pub const LABEL: &str = "label";

    /// Single-frame input layers.
    pub const INPUT: [&str; 5] = [REFLECTIONS, OBSERVATIONS, REFLECTED_ENERGY, HEIGHT, SHADOW_HEIGHT];
    /// Per-frame sensor masses written alongside the input layers.
    pub const EVIDENCE: [&str; 3] = [M_OCCUPIED, M_FREE, M_UNKNOWN];
    /// Extra per-frame layers needed to fuse a frame loaded from disk.
    pub const FRAME_AUX: [&str; 2] = [TRANSMISSIONS, OBSERVATION_HEIGHT];
    /// Fused target layers.
    pub const TARGET: [&str; 7] = [
        REFLECTIONS,
        OBSERVATION_HEIGHT,
        REFLECTED_ENERGY,
        HEIGHT,
        BEL_FREE,
        BEL_OCCUPIED,
        BEL_UNKNOWN,
    ];

    /// Layers whose values are beliefs or masses in `[0, 1]`.
    pub fn is_belief(name: &str) -> bool {
        name.starts_with("bel_") || name.starts_with("m_")
    }
}

/// Integer cell address `(i, j)` = (column along x, row along y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub i: usize,
    pub j: usize,
}

impl CellIndex {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

/// Geometry of a top-view grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    cell_size: f64,
    width: usize,
    height: usize,
    origin_x: f64,
    origin_y: f64,
}

/// Round a cell size to the nearest value representable in the on-disk
/// `f32` header, keeping its shortest decimal form (0.15 stays 0.15).
fn canonical_cell_size(cell_size: f64) -> f64 {
    let narrow = cell_size as f32;
    narrow.to_string().parse().unwrap_or(cell_size)
}

impl GridSpec {
    pub fn new(cell_size: f64, width: usize, height: usize, origin_x: f64, origin_y: f64) -> Result<Self> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid(format!(
                "grid must be at least 1x1, got {width}x{height}"
            )));
        }
        if width > u32::MAX as usize || height > u32::MAX as usize {
            return Err(Error::InvalidGrid("grid dimensions exceed u32".into()));
        }
        if !(origin_x.is_finite() && origin_y.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self {
            cell_size: canonical_cell_size(cell_size),
            width,
            height,
            origin_x,
            origin_y,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn origin(&self) -> [f64; 2] {
        [self.origin_x, self.origin_y]
    }
    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    /// World-space extent `[min_x, min_y, max_x, max_y]`.
    pub fn bounds(&self) -> [f64; 4] {
        [
            self.origin_x,
            self.origin_y,
            self.origin_x + self.width as f64 * self.cell_size,
            self.origin_y + self.height as f64 * self.cell_size,
        ]
    }

    /// Same geometry shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            origin_x: self.origin_x + dx,
            origin_y: self.origin_y + dy,
            ..*self
        }
    }

    /// Cell containing `p`, or `None` outside `[0, width) x [0, height)`.
    pub fn world_to_cell(&self, p: [f64; 2]) -> Option<CellIndex> {
        let fx = ((p[0] - self.origin_x) / self.cell_size).floor();
        let fy = ((p[1] - self.origin_y) / self.cell_size).floor();
        if fx >= 0.0 && fy >= 0.0 && fx < self.width as f64 && fy < self.height as f64 {
            Some(CellIndex::new(fx as usize, fy as usize))
        } else {
            None
        }
    }

    pub fn cell_center(&self, cell: CellIndex) -> Result<[f64; 2]> {
        if !self.contains(cell) {
            return Err(Error::CellOutOfBounds {
                i: cell.i,
                j: cell.j,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.center_unchecked(cell.i, cell.j))
    }

    #[inline]
    pub(crate) fn center_unchecked(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin_x + (i as f64 + 0.5) * self.cell_size,
            self.origin_y + (j as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        cell.i < self.width && cell.j < self.height
    }

    /// Row-major storage offset.
    #[inline]
    pub fn linear(&self, cell: CellIndex) -> usize {
        cell.j * self.width + cell.i
    }

    #[inline]
    pub fn unlinear(&self, idx: usize) -> CellIndex {
        CellIndex::new(idx % self.width, idx / self.width)
    }
}

impl Default for GridSpec {
    /// 536 x 536 cells of 0.15 m centred on the reference pose.
    fn default() -> Self {
        Self {
            cell_size: DEFAULT_CELL_SIZE,
            width: DEFAULT_CELLS_PER_AXIS,
            height: DEFAULT_CELLS_PER_AXIS,
            origin_x: DEFAULT_ORIGIN,
            origin_y: DEFAULT_ORIGIN,
        }
    }
}

/// A named scalar layer.
#[derive(Debug, Clone)]
pub struct Layer {
    pub name: String,
    pub values: Vec<f32>,
}

impl Layer {
    pub fn new(name: impl Into<String>, values: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }

    pub fn filled(name: impl Into<String>, len: usize, value: f32) -> Self {
        Self::new(name, vec![value; len])
    }

    /// Equality on the raw bit patterns, so NaN payloads compare equal to themselves.
    pub fn bitwise_eq(&self, other: &Layer) -> bool {
        self.name == other.name
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Which layer inventory a map satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSchema {
    /// Single-frame input layers plus the sensor masses.
    Input,
    /// Fused target layers.
    Target,
    /// Anything else (label maps, estimates with extra layers, ...).
    Custom,
}

impl LayerSchema {
    pub fn required_layers(self) -> &'static [&'static str] {
        match self {
            LayerSchema::Input => &layers::INPUT,
            LayerSchema::Target => &layers::TARGET,
            LayerSchema::Custom => &[],
        }
    }

    /// Strongest schema whose layers are all present in `names`.
    pub fn detect<'a>(names: impl IntoIterator<Item = &'a str> + Clone) -> Self {
        let has_all = |required: &[&str]| required.iter().all(|r| names.clone().into_iter().any(|n| n == *r));
        if has_all(&layers::TARGET) {
            LayerSchema::Target
        } else if has_all(&layers::INPUT) && has_all(&layers::EVIDENCE) {
            LayerSchema::Input
        } else {
            LayerSchema::Custom
        }
    }
}

/// Ordered collection of uniquely named layers over one [`GridSpec`].
#[derive(Debug, Clone)]
pub struct MultiLayerGridMap {
    spec: GridSpec,
    layers: Vec<Layer>,
}

impl MultiLayerGridMap {
    pub fn new(spec: GridSpec) -> Self {
        Self {
            spec,
            layers: Vec::new(),
        }
    }

    pub fn with_layers(spec: GridSpec, layers: Vec<Layer>) -> Result<Self> {
        let mut map = Self::new(spec);
        for layer in layers {
            map.push_layer(layer)?;
        }
        Ok(map)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> + Clone {
        self.layers.iter().map(|l| l.name.as_str())
    }

    pub fn schema(&self) -> LayerSchema {
        LayerSchema::detect(self.layer_names())
    }

    pub fn push_layer(&mut self, layer: Layer) -> Result<()> {
        if layer.values.len() != self.spec.cell_count() {
            return Err(Error::DimensionMismatch(format!(
                "layer '{}' has {} values, grid has {} cells",
                layer.name,
                layer.values.len(),
                self.spec.cell_count()
            )));
        }
        if self.layer(&layer.name).is_some() {
            return Err(Error::DuplicateLayer(layer.name));
        }
        self.layers.push(layer);
        Ok(())
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Layer> {
        self.layers.iter_mut().find(|l| l.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Layer> {
        self.layer(name).ok_or_else(|| Error::MissingLayer(name.to_string()))
    }

    /// Bit-exact equality of geometry, layer order and contents.
    pub fn bitwise_eq(&self, other: &MultiLayerGridMap) -> bool {
        self.spec == other.spec
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.bitwise_eq(b))
    }
}

/// Rigid sensor-to-world transform with a timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub timestamp: f64,
    translation: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    rotation: [f64; 4],
}

impl Pose {
    pub fn new(timestamp: f64, translation: [f64; 3], rotation: [f64; 4]) -> Result<Self> {
        let norm = rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUATERNION_TOLERANCE || norm.is_nan() {
            return Err(Error::InvalidPose(format!("quaternion norm {norm} is not unit")));
        }
        if !(timestamp.is_finite() && translation.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidPose("non-finite timestamp or translation".into()));
        }
        Ok(Self {
            timestamp,
            translation,
            rotation,
        })
    }

    pub fn identity() -> Self {
        Self {
            timestamp: 0.0,
            translation: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
        }
    }

    /// Pose with a rotation of `yaw` radians about +z.
    pub fn from_yaw(timestamp: f64, translation: [f64; 3], yaw: f64) -> Self {
        let (s, c) = (0.5 * yaw).sin_cos();
        Self {
            timestamp,
            translation,
            rotation: [c, 0.0, 0.0, s],
        }
    }

    pub fn translation(&self) -> [f64; 3] {
        self.translation
    }

    pub fn rotation(&self) -> [f64; 4] {
        self.rotation
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let [w, x, y, z] = self.rotation;
        // v + 2w(q x v) + 2 q x (q x v)
        let t = [
            2.0 * (y * v[2] - z * v[1]),
            2.0 * (z * v[0] - x * v[2]),
            2.0 * (x * v[1] - y * v[0]),
        ];
        [
            v[0] + w * t[0] + (y * t[2] - z * t[1]),
            v[1] + w * t[1] + (z * t[0] - x * t[2]),
            v[2] + w * t[2] + (x * t[1] - y * t[0]),
        ]
    }

    /// Sensor frame to world frame: rotation, then translation.
    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotate(p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    pub fn inverse(&self) -> Pose {
        let [w, x, y, z] = self.rotation;
        let conj = Pose {
            timestamp: self.timestamp,
            translation: [0.0; 3],
            rotation: [w, -x, -y, -z],
        };
        let t = conj.rotate(self.translation);
        Pose {
            translation: [-t[0], -t[1], -t[2]],
            ..conj
        }
    }

    /// Yaw angle of the rotation about +z.
    pub fn yaw(&self) -> f64 {
        let [w, x, y, z] = self.rotation;
        (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))
    }

    pub fn horizontal_distance(&self, other: &Pose) -> f64 {
        let dx = self.translation[0] - other.translation[0];
        let dy = self.translation[1] - other.translation[1];
        dx.hypot(dy)
    }
}

/// One range return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && self.intensity.is_finite()
            && self.intensity >= 0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub sensor_origin: [f64; 3],
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self {
            points,
            sensor_origin: [0.0; 3],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-cell mass triple over {occupied}, {free} and the whole frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellEvidence {
    pub occupied: f64,
    pub free: f64,
    pub unknown: f64,
}

impl CellEvidence {
    pub const UNKNOWN: CellEvidence = CellEvidence {
        occupied: 0.0,
        free: 0.0,
        unknown: 1.0,
    };

    pub fn new(occupied: f64, free: f64, unknown: f64) -> Result<Self> {
        let ev = Self {
            occupied,
            free,
            unknown,
        };
        if ev.is_valid() {
            Ok(ev)
        } else {
            Err(Error::InvalidParameter(format!(
                "evidence ({occupied}, {free}, {unknown}) is not a valid mass triple"
            )))
        }
    }

    /// Builds the triple from the two informative masses, assigning the
    /// remainder to `unknown`. Inputs are clamped into the simplex.
    pub fn from_masses(occupied: f64, free: f64) -> Self {
        let occupied = occupied.clamp(0.0, 1.0);
        let free = free.clamp(0.0, 1.0 - occupied);
        let ev = Self {
            occupied,
            free,
            unknown: (1.0 - occupied - free).max(0.0),
        };
        ev.debug_check();
        ev
    }

    pub fn is_valid(&self) -> bool {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        in_unit(self.occupied)
            && in_unit(self.free)
            && in_unit(self.unknown)
            && (self.occupied + self.free + self.unknown - 1.0).abs() <= MASS_SUM_TOLERANCE
    }

    /// Debug-build hook for the mass-sum invariant.
    #[inline]
    pub fn debug_check(&self) {
        debug_assert!(self.is_valid(), "invalid evidence triple {self:?}");
    }
}
