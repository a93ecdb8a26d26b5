use evigrid::fusion::{build_target_map, fuse_cell_evidence, fuse_height, FusionConfig, FusionWindow, HeightEstimate};
use evigrid::grid::layers;
use evigrid::raster::{FrameRaster, FRAME_LAYERS};
use evigrid::{CellEvidence, GridSpec, Layer, MultiLayerGridMap, Pose};
use proptest::prelude::*;

fn evidence() -> impl Strategy<Value = CellEvidence> {
    (0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(a, b)| {
        let o = a;
        let f = (1.0 - a) * b;
        CellEvidence::from_masses(o, f)
    })
}

/// Sum over all hypothesis sequences: a sequence supports "occupied" when
/// it names O at least once and never F, "free" symmetrically.
fn enumerate(masses: &[CellEvidence]) -> (f64, f64) {
    let n = masses.len();
    let (mut occ, mut free) = (0.0, 0.0);
    for code in 0..3usize.pow(n as u32) {
        let (mut c, mut w) = (code, 1.0);
        let (mut saw_o, mut saw_f) = (false, false);
        for m in masses {
            match c % 3 {
                0 => {
                    w *= m.occupied;
                    saw_o = true;
                }
                1 => {
                    w *= m.free;
                    saw_f = true;
                }
                _ => w *= m.unknown,
            }
            c /= 3;
        }
        match (saw_o, saw_f) {
            (true, false) => occ += w,
            (false, true) => free += w,
            _ => {}
        }
    }
    (occ, free)
}

/// Mean and variance of the normalized product of normal densities by
/// trapezoidal integration.
fn product_moments(est: &[HeightEstimate]) -> (f64, f64) {
    let lo = est
        .iter()
        .map(|e| e.mu - 12.0 * e.sigma_sq.sqrt())
        .fold(f64::INFINITY, f64::min);
    let hi = est
        .iter()
        .map(|e| e.mu + 12.0 * e.sigma_sq.sqrt())
        .fold(f64::NEG_INFINITY, f64::max);
    let steps = 400_000;
    let dx = (hi - lo) / steps as f64;
    let log_density = |x: f64| -> f64 { est.iter().map(|e| -(x - e.mu).powi(2) / (2.0 * e.sigma_sq)).sum() };
    let peak = (0..=steps)
        .map(|k| log_density(lo + k as f64 * dx))
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for k in 0..=steps {
        let x = lo + k as f64 * dx;
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 } * (log_density(x) - peak).exp();
        z += w;
        m1 += w * x;
        m2 += w * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

proptest! {
    #[test]
    fn closed_form_matches_enumeration(masses in prop::collection::vec(evidence(), 1..=8)) {
        let fused = fuse_cell_evidence(&masses).unwrap();
        let (occ, free) = enumerate(&masses);
        prop_assert!((fused.occupied - occ).abs() < 1e-12);
        prop_assert!((fused.free - free).abs() < 1e-12);
        prop_assert!((fused.occupied + fused.free + fused.unknown - 1.0).abs() < 1e-12);
    }

    #[test]
    fn order_does_not_matter(masses in prop::collection::vec(evidence(), 1..=10), rot in 0usize..10) {
        let mut rotated = masses.clone();
        rotated.rotate_left(rot % masses.len());
        rotated.reverse();
        let a = fuse_cell_evidence(&masses).unwrap();
        let b = fuse_cell_evidence(&rotated).unwrap();
        prop_assert!((a.occupied - b.occupied).abs() < 1e-12);
        prop_assert!((a.free - b.free).abs() < 1e-12);
    }

    #[test]
    fn vacuous_frames_are_neutral(masses in prop::collection::vec(evidence(), 1..=6), extra in 1usize..4) {
        let mut padded = masses.clone();
        padded.extend(std::iter::repeat_n(CellEvidence::UNKNOWN, extra));
        let a = fuse_cell_evidence(&masses).unwrap();
        let b = fuse_cell_evidence(&padded).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn single_frame_is_identity(m in evidence()) {
        let f = fuse_cell_evidence(&[m]).unwrap();
        prop_assert!((f.occupied - m.occupied).abs() < 1e-15);
        prop_assert!((f.free - m.free).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn height_fusion_matches_product_density(
        est in prop::collection::vec((-2.0f64..2.0, 0.01f64..1.0), 1..=5),
    ) {
        let est: Vec<HeightEstimate> = est.into_iter().map(|(mu, sigma_sq)| HeightEstimate { mu, sigma_sq }).collect();
        let fused = fuse_height(&est, 1e-4).unwrap();
        let (mean, var) = product_moments(&est);
        prop_assert!((fused.mu - mean).abs() < 1e-7, "{} vs {}", fused.mu, mean);
        prop_assert!((fused.sigma_sq - var).abs() < 1e-7 * var.max(1.0), "{} vs {}", fused.sigma_sq, var);
    }
}

fn frame_strategy(cells: usize) -> impl Strategy<Value = Vec<[f32; 6]>> {
    // per cell: m_occupied, m_free, reflections, energy, height, observation height
    prop::collection::vec(
        (
            0.0f32..=1.0,
            0.0f32..=1.0,
            0u8..3,
            0.0f32..1.0,
            0.0f32..2.0,
            0.0f32..3.0,
        )
            .prop_map(|(a, b, n, e, h, o)| [a, (1.0 - a) * b, n as f32, e, h, o]),
        cells,
    )
}

fn frame(spec: GridSpec, data: &[[f32; 6]]) -> FrameRaster {
    let col = |k: usize| data.iter().map(|c| c[k]).collect::<Vec<f32>>();
    let layer_values = |name: &str| -> Vec<f32> {
        match name {
            layers::M_OCCUPIED => col(0),
            layers::M_FREE => col(1),
            layers::M_UNKNOWN => data.iter().map(|c| 1.0 - c[0] - c[1]).collect(),
            layers::REFLECTIONS => col(2),
            layers::REFLECTED_ENERGY => col(3),
            layers::HEIGHT => col(4),
            layers::OBSERVATION_HEIGHT => col(5),
            layers::TRANSMISSIONS => vec![1.0; data.len()],
            layers::OBSERVATIONS => vec![1.0; data.len()],
            _ => vec![0.0; data.len()],
        }
    };
    let layers = FRAME_LAYERS.iter().map(|n| Layer::new(*n, layer_values(n))).collect();
    FrameRaster::from_map(MultiLayerGridMap::with_layers(spec, layers).unwrap(), Pose::identity()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn target_map_matches_per_cell_oracle(frames in prop::collection::vec(frame_strategy(12), 1..6)) {
        let spec = GridSpec::new(1.0, 4, 3, -2.0, -1.5).unwrap();
        let cfg = FusionConfig::default();
        let rasters: Vec<FrameRaster> = frames.iter().map(|d| frame(spec, d)).collect();
        let window = FusionWindow::new(rasters, Pose::identity(), cfg.radius).unwrap();
        let target = build_target_map(&window, &spec, &cfg).unwrap();
        let get = |name: &str| target.require(name).unwrap().values.clone();
        let (bel_o, bel_f, bel_u) = (get(layers::BEL_OCCUPIED), get(layers::BEL_FREE), get(layers::BEL_UNKNOWN));
        let (refl, energy, height, obs) =
            (get(layers::REFLECTIONS), get(layers::REFLECTED_ENERGY), get(layers::HEIGHT), get(layers::OBSERVATION_HEIGHT));

        for k in 0..spec.cell_count() {
            let masses: Vec<CellEvidence> = frames
                .iter()
                .map(|f| CellEvidence::from_masses(f[k][0] as f64, f[k][1] as f64))
                .collect();
            let bel = fuse_cell_evidence(&masses).unwrap();
            prop_assert!((bel_o[k] as f64 - bel.occupied).abs() < 1e-6);
            prop_assert!((bel_f[k] as f64 - bel.free).abs() < 1e-6);
            prop_assert!((bel_u[k] as f64 - bel.unknown).abs() < 1e-6);

            let hits: Vec<&[f32; 6]> = frames.iter().map(|f| &f[k]).filter(|c| c[2] > 0.0).collect();
            let n: f64 = hits.iter().map(|c| c[2] as f64).sum();
            prop_assert_eq!(refl[k] as f64, n);
            let max_obs = frames.iter().map(|f| f[k][5]).fold(f32::NEG_INFINITY, f32::max);
            prop_assert_eq!(obs[k], max_obs);
            if hits.is_empty() {
                prop_assert_eq!(energy[k], 0.0);
                prop_assert_eq!(height[k], 0.0);
            } else {
                let e = hits.iter().map(|c| c[2] as f64 * c[3] as f64).sum::<f64>() / n;
                prop_assert!((energy[k] as f64 - e).abs() < 1e-6);
                let est: Vec<HeightEstimate> = hits
                    .iter()
                    .map(|c| HeightEstimate::from_heights(c[5] as f64, c[4] as f64, cfg.sigma_min))
                    .collect();
                let h = fuse_height(&est, cfg.sigma_min).unwrap();
                prop_assert!((height[k] as f64 - h.mu).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn frames_beyond_the_radius_are_dropped() {
    let spec = GridSpec::new(1.0, 4, 3, -2.0, -1.5).unwrap();
    let far = FrameRaster::unobserved(spec, Pose::from_yaw(0.0, [50.0, 0.0, 0.0], 0.0));
    let near = FrameRaster::unobserved(spec, Pose::from_yaw(0.1, [3.0, 4.0, 0.0], 0.0));
    let w = FusionWindow::new(vec![far.clone(), near], Pose::identity(), 5.0).unwrap();
    assert_eq!(w.len(), 1);
    assert!(FusionWindow::new(vec![far], Pose::identity(), 5.0).is_err());
}
