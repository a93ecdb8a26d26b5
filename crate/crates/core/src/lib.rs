//! Evidential top-view grid mapping.
//!
//! Single range-sensor scans are rasterized into multi-layer grid maps with
//! per-cell sensor masses, and windows of such maps are fused into target
//! maps whose beliefs separate free, occupied and contradictory (dynamic)
//! cells.

pub mod error;
pub mod fusion;
pub mod grid;
pub mod ground;
pub mod io;
pub mod metrics;
pub mod parallel;
pub mod pipeline;
pub mod raster;
pub mod sim;

pub use error::{Error, Result};
pub use grid::{CellEvidence, CellIndex, GridSpec, Layer, LayerSchema, MultiLayerGridMap, Point, PointCloud, Pose};
