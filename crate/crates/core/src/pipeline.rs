//! Scan-to-target composition used by the command-line tool and the tests.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{build_target_map, FusionConfig, FusionWindow};
use crate::grid::{GridSpec, MultiLayerGridMap, PointCloud, Pose};
use crate::ground::GroundFitConfig;
use crate::raster::{rasterize_scan, FrameRaster, SensorModelConfig};

/// Rasterizes scans independently, in parallel; output order follows input order.
pub fn rasterize_frames(
    scans: &[(PointCloud, Pose)],
    spec: &GridSpec,
    sensor: &SensorModelConfig,
    ground: &GroundFitConfig,
) -> Result<Vec<FrameRaster>> {
    scans
        .par_iter()
        .map(|(cloud, pose)| rasterize_scan(cloud, pose, spec, sensor, ground))
        .collect()
}

/// Index of the pose closest in time to `timestamp` (first on ties).
pub fn nearest_pose(poses: &[Pose], timestamp: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, p) in poses.iter().enumerate() {
        let d = (p.timestamp - timestamp).abs();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best.map(|(k, _)| k)
}

/// Indices `[reference - k, reference + k]` clipped to `0..len`.
pub fn window_indices(len: usize, reference: usize, k: usize) -> std::ops::Range<usize> {
    let lo = reference.saturating_sub(k);
    let hi = (reference + k + 1).min(len);
    lo..hi
}

/// Fuses `frames` around `frames[reference]` within `radius` into a target
/// map expressed on `spec` in the reference sensor frame.
pub fn fuse_frames(
    frames: Vec<FrameRaster>,
    reference_pose: Pose,
    spec: &GridSpec,
    cfg: &FusionConfig,
) -> Result<MultiLayerGridMap> {
    if frames.is_empty() {
        return Err(Error::EmptyWindow { radius: cfg.radius });
    }
    let window = FusionWindow::new(frames, reference_pose, cfg.radius)?;
    build_target_map(&window, spec, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_ranges() {
        assert_eq!(window_indices(10, 5, 2), 3..8);
        assert_eq!(window_indices(10, 0, 3), 0..4);
        assert_eq!(window_indices(4, 3, 9), 0..4);
    }

    #[test]
    fn nearest_pose_ties_and_empty() {
        let poses: Vec<_> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&t| Pose::from_yaw(t, [0.0; 3], 0.0))
            .collect();
        assert_eq!(nearest_pose(&poses, 0.74), Some(1));
        assert_eq!(nearest_pose(&poses, 0.25), Some(0));
        assert_eq!(nearest_pose(&poses, 9.0), Some(2));
        assert_eq!(nearest_pose(&[], 0.0), None);
    }

    #[test]
    fn empty_frame_list() {
        let r = fuse_frames(vec![], Pose::identity(), &GridSpec::default(), &FusionConfig::default());
        assert!(matches!(r, Err(Error::EmptyWindow { .. })));
    }
}
