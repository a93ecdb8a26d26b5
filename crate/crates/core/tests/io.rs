use std::path::Path;

use evigrid::io::{
    decode_grid_map, decode_point_cloud, encode_grid_map, encode_point_cloud, is_grid_map_file, parse_poses,
    read_grid_map, read_point_cloud, read_poses, write_grid_map, write_point_cloud, write_poses, PointFormat,
};
use evigrid::{Error, GridSpec, Layer, MultiLayerGridMap, Point, PointCloud, Pose};
use proptest::prelude::*;

fn map_strategy() -> impl Strategy<Value = MultiLayerGridMap> {
    (
        1usize..6,
        1usize..6,
        0.05f64..2.0,
        -100.0f64..100.0,
        -100.0f64..100.0,
        0usize..4,
    )
        .prop_flat_map(|(w, h, cs, ox, oy, n)| {
            // raw bit patterns cover NaN payloads, infinities and subnormals
            prop::collection::vec(prop::collection::vec(any::<u32>(), w * h), n).prop_map(move |layers| {
                // the header stores the cell size as f32
                let spec = GridSpec::new(cs as f32 as f64, w, h, ox, oy).unwrap();
                let layers = layers
                    .into_iter()
                    .enumerate()
                    .map(|(k, bits)| Layer::new(format!("layer_{k}"), bits.into_iter().map(f32::from_bits).collect()))
                    .collect();
                MultiLayerGridMap::with_layers(spec, layers).unwrap()
            })
        })
}

fn cloud_strategy() -> impl Strategy<Value = PointCloud> {
    prop::collection::vec((-1e4f32..1e4, -1e4f32..1e4, -50f32..50.0, 0f32..1e3), 0..200).prop_map(|pts| {
        PointCloud::new(
            pts.into_iter()
                .map(|(x, y, z, i)| Point::new(x as f64, y as f64, z as f64, i as f64))
                .collect(),
        )
    })
}

proptest! {
    #[test]
    fn grid_map_round_trip_is_bit_identical(map in map_strategy()) {
        let bytes = encode_grid_map(&map);
        let back = decode_grid_map(&bytes).unwrap();
        prop_assert!(back.bitwise_eq(&map));
        prop_assert_eq!(encode_grid_map(&back), bytes);
    }

    #[test]
    fn point_cloud_round_trip(cloud in cloud_strategy(), nuscenes in any::<bool>()) {
        let format = if nuscenes { PointFormat::NuscenesBin } else { PointFormat::XyziF32 };
        let bytes = encode_point_cloud(&cloud, format);
        prop_assert_eq!(bytes.len(), cloud.len() * format.stride());
        let read = decode_point_cloud(&bytes, format, Path::new("mem")).unwrap();
        prop_assert_eq!(read.dropped, 0);
        prop_assert_eq!(read.cloud, cloud);
    }

    #[test]
    fn truncated_or_padded_maps_are_rejected(map in map_strategy(), cut in 1usize..64, extra in 1usize..8) {
        let bytes = encode_grid_map(&map);
        let short = &bytes[..bytes.len().saturating_sub(cut)];
        prop_assert!(matches!(decode_grid_map(short), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.extend(std::iter::repeat_n(0u8, extra));
        prop_assert!(matches!(decode_grid_map(&long), Err(Error::Format(_))));
    }

    #[test]
    fn pose_files_round_trip(
        steps in prop::collection::vec((0.0f64..1.0, -50.0f64..50.0, -50.0f64..50.0, -2.0f64..2.0, -3.2f64..3.2), 1..20),
    ) {
        let mut t = 0.0;
        let poses: Vec<Pose> = steps
            .into_iter()
            .map(|(dt, x, y, z, yaw)| {
                t += dt;
                Pose::from_yaw(t, [x, y, z], yaw)
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        write_poses(&poses, &path).unwrap();
        prop_assert_eq!(read_poses(&path).unwrap(), poses);
    }
}

#[test]
fn empty_file_is_an_empty_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.bin");
    std::fs::write(&path, []).unwrap();
    for format in [PointFormat::XyziF32, PointFormat::NuscenesBin] {
        assert!(read_point_cloud(&path, format).unwrap().is_empty());
    }
}

#[test]
fn nuscenes_record_ignores_the_ring_channel() {
    let mut bytes = Vec::new();
    for v in [1.0f32, 2.0, 3.0, 0.5, 7.0] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let read = decode_point_cloud(&bytes, PointFormat::NuscenesBin, Path::new("mem")).unwrap();
    assert_eq!(read.cloud.points, vec![Point::new(1.0, 2.0, 3.0, 0.5)]);

    bytes.push(0);
    let err = decode_point_cloud(&bytes, PointFormat::NuscenesBin, Path::new("mem")).unwrap_err();
    assert!(
        matches!(
            err,
            Error::BadStride {
                len: 21,
                stride: 20,
                ..
            }
        ),
        "{err}"
    );
}

#[test]
fn invalid_records_are_dropped_and_counted() {
    let cloud = PointCloud::new(vec![
        Point::new(1.0, 0.0, 0.0, 0.1),
        Point::new(f64::NAN, 0.0, 0.0, 0.1),
        Point::new(1.0, 0.0, 0.0, -0.5),
        Point::new(2.0, 0.0, 0.0, 0.0),
    ]);
    let read = decode_point_cloud(
        &encode_point_cloud(&cloud, PointFormat::XyziF32),
        PointFormat::XyziF32,
        Path::new("m"),
    )
    .unwrap();
    assert_eq!(read.dropped, 2);
    assert_eq!(read.cloud.len(), 2);
}

#[test]
fn one_cell_map_layout() {
    let spec = GridSpec::new(0.5, 1, 1, -1.0, 2.0).unwrap();
    let map = MultiLayerGridMap::with_layers(spec, vec![Layer::new("height", vec![1.25])]).unwrap();
    let bytes = encode_grid_map(&map);
    assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 4 + 8 + 8 + 4 + (4 + 6) + 4);
    assert_eq!(&bytes[..4], b"EGMF");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), 0.5);
    assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), -1.0);
    assert_eq!(f64::from_le_bytes(bytes[28..36].try_into().unwrap()), 2.0);
    assert_eq!(&bytes[44..50], b"height");
    assert_eq!(f32::from_le_bytes(bytes[50..54].try_into().unwrap()), 1.25);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.egm");
    write_grid_map(&map, &path).unwrap();
    assert!(is_grid_map_file(&path).unwrap());
    assert!(read_grid_map(&path).unwrap().bitwise_eq(&map));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_grid_map(&bad), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[4] = 2;
    assert!(matches!(decode_grid_map(&bad), Err(Error::Format(_))));
}

#[test]
fn duplicate_layer_names_are_rejected() {
    let spec = GridSpec::new(1.0, 1, 1, 0.0, 0.0).unwrap();
    let mut map = MultiLayerGridMap::new(spec);
    map.push_layer(Layer::new("a", vec![0.0])).unwrap();
    let mut bytes = encode_grid_map(&map);
    bytes[36] = 2;
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(b"a");
    bytes.extend_from_slice(&0f32.to_le_bytes());
    assert!(decode_grid_map(&bytes).is_err());
}

#[test]
fn pose_lines() {
    let p = Path::new("poses.txt");
    let poses = parse_poses("# t x y z qw qx qy qz\n\n0.5 1 2 3 1 0 0 0\n", p).unwrap();
    assert_eq!(poses.len(), 1);
    assert_eq!(poses[0].timestamp, 0.5);
    assert_eq!(poses[0].translation(), [1.0, 2.0, 3.0]);
    assert_eq!(poses[0].rotation(), [1.0, 0.0, 0.0, 0.0]);

    let near_unit = parse_poses("0 0 0 0 0.9995 0 0 0\n", p).unwrap();
    assert!((near_unit[0].rotation()[0] - 1.0).abs() < 1e-15);

    assert!(parse_poses("0 0 0 0 0.99 0 0 0\n", p).is_err());
    assert!(parse_poses("0 0 0 0 1 0 0\n", p).is_err());
    assert!(parse_poses("0 0 0 zero 1 0 0 0\n", p).is_err());
    // equal timestamps are accepted, decreasing ones are not
    assert_eq!(parse_poses("1 0 0 0 1 0 0 0\n1 0 0 0 1 0 0 0\n", p).unwrap().len(), 2);
    let err = parse_poses("2 0 0 0 1 0 0 0\n1 0 0 0 1 0 0 0\n", p).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
}

#[test]
fn format_names() {
    for f in [PointFormat::XyziF32, PointFormat::NuscenesBin] {
        assert_eq!(f.name().parse::<PointFormat>().unwrap(), f);
    }
    assert!(matches!("pcd".parse::<PointFormat>(), Err(Error::UnknownFormat(_))));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    write_point_cloud(
        &PointCloud::new(vec![Point::new(1.0, 2.0, 3.0, 4.0)]),
        &path,
        PointFormat::XyziF32,
    )
    .unwrap();
    assert!(!is_grid_map_file(&path).unwrap());
}
