//! Readers and writers for point clouds, pose lists and grid-map files.
//!
//! All binary formats are little-endian. The grid-map layout is
//!
//! ```text
//! "EGMF" | version u32 | width u32 | height u32 | cell_size f32
//!        | origin_x f64 | origin_y f64 | layer_count u32
//! per layer: name_len u32 | name (UTF-8) | width*height f32, row-major, row 0 at minimum y
//! ```

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Layer, MultiLayerGridMap, Point, PointCloud, Pose, QUATERNION_TOLERANCE};

pub const GRID_MAP_MAGIC: [u8; 4] = *b"EGMF";
pub const GRID_MAP_VERSION: u32 = 1;
/// Bytes before the first layer record.
pub const GRID_MAP_HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4 + 8 + 8 + 4;
/// Quaternions farther than this from unit norm are rejected on load.
pub const POSE_NORM_TOLERANCE: f64 = 1e-3;

/// On-disk point record layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PointFormat {
    /// x, y, z, intensity as f32.
    #[default]
    XyziF32,
    /// x, y, z, intensity, ring as f32; the ring channel is ignored on read
    /// and written as zero.
    NuscenesBin,
}

impl PointFormat {
    pub const fn stride(self) -> usize {
        match self {
            PointFormat::XyziF32 => 16,
            PointFormat::NuscenesBin => 20,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            PointFormat::XyziF32 => "xyzi_f32",
            PointFormat::NuscenesBin => "nuscenes_bin",
        }
    }
}

impl FromStr for PointFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyzi_f32" => Ok(PointFormat::XyziF32),
            "nuscenes_bin" => Ok(PointFormat::NuscenesBin),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for PointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A decoded cloud together with the number of rejected records.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudRead {
    pub cloud: PointCloud,
    pub dropped: usize,
}

/// Decodes point records. Records with non-finite values or a negative
/// intensity are dropped and counted.
pub fn decode_point_cloud(bytes: &[u8], format: PointFormat, path: &Path) -> Result<PointCloudRead> {
    let stride = format.stride();
    if !bytes.len().is_multiple_of(stride) {
        return Err(Error::BadStride {
            path: path.to_path_buf(),
            len: bytes.len(),
            stride,
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / stride);
    let mut dropped = 0;
    for rec in bytes.chunks_exact(stride) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        let p = Point::new(f(0), f(1), f(2), f(3));
        if p.is_valid() {
            points.push(p);
        } else {
            dropped += 1;
        }
    }
    Ok(PointCloudRead {
        cloud: PointCloud::new(points),
        dropped,
    })
}

/// Reads a cloud, logging a warning when records were dropped.
pub fn read_point_cloud_with_report(path: impl AsRef<Path>, format: PointFormat) -> Result<PointCloudRead> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let read = decode_point_cloud(&bytes, format, path)?;
    if read.dropped > 0 {
        log::warn!("{}: dropped {} invalid point records", path.display(), read.dropped);
    }
    Ok(read)
}

pub fn read_point_cloud(path: impl AsRef<Path>, format: PointFormat) -> Result<PointCloud> {
    read_point_cloud_with_report(path, format).map(|r| r.cloud)
}

pub fn encode_point_cloud(cloud: &PointCloud, format: PointFormat) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * format.stride());
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if format == PointFormat::NuscenesBin {
            out.extend_from_slice(&0f32.to_le_bytes());
        }
    }
    out
}

pub fn write_point_cloud(cloud: &PointCloud, path: impl AsRef<Path>, format: PointFormat) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_point_cloud(cloud, format)).map_err(|e| Error::io(path, e))
}

/// Serializes a grid map into the grid-map file layout.
pub fn encode_grid_map(map: &MultiLayerGridMap) -> Vec<u8> {
    let spec = map.spec();
    let payload: usize = map.layers().iter().map(|l| 4 + l.name.len() + 4 * l.values.len()).sum();
    let mut out = Vec::with_capacity(GRID_MAP_HEADER_LEN + payload);
    out.extend_from_slice(&GRID_MAP_MAGIC);
    out.extend_from_slice(&GRID_MAP_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.width() as u32).to_le_bytes());
    out.extend_from_slice(&(spec.height() as u32).to_le_bytes());
    out.extend_from_slice(&(spec.cell_size() as f32).to_le_bytes());
    let [ox, oy] = spec.origin();
    out.extend_from_slice(&ox.to_le_bytes());
    out.extend_from_slice(&oy.to_le_bytes());
    out.extend_from_slice(&(map.layers().len() as u32).to_le_bytes());
    for layer in map.layers() {
        out.extend_from_slice(&(layer.name.len() as u32).to_le_bytes());
        out.extend_from_slice(layer.name.as_bytes());
        for v in &layer.values {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated file: {what} needs {n} bytes at offset {}, {} available",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.array(what).map(u32::from_le_bytes)
    }
}

/// Parses the grid-map file layout.
pub fn decode_grid_map(bytes: &[u8]) -> Result<MultiLayerGridMap> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = c.array("magic")?;
    if magic != GRID_MAP_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = c.u32("version")?;
    if version != GRID_MAP_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let width = c.u32("width")? as usize;
    let height = c.u32("height")? as usize;
    let cell_size = f32::from_le_bytes(c.array("cell size")?) as f64;
    let origin_x = f64::from_le_bytes(c.array("origin x")?);
    let origin_y = f64::from_le_bytes(c.array("origin y")?);
    let spec = GridSpec::new(cell_size, width, height, origin_x, origin_y)
        .map_err(|e| Error::Format(format!("invalid header: {e}")))?;
    let count = c.u32("layer count")?;
    let cells = spec.cell_count();
    let mut map = MultiLayerGridMap::new(spec);
    for _ in 0..count {
        let len = c.u32("layer name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "layer name")?)
            .map_err(|_| Error::Format("layer name is not valid UTF-8".into()))?
            .to_string();
        let raw = c.take(cells.saturating_mul(4), "layer values")?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_bits(u32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        map.push_layer(Layer::new(name, values))?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last layer",
            bytes.len() - c.pos
        )));
    }
    Ok(map)
}

pub fn write_grid_map(map: &MultiLayerGridMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_grid_map(map)).map_err(|e| Error::io(path, e))
}

pub fn read_grid_map(path: impl AsRef<Path>) -> Result<MultiLayerGridMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid_map(&bytes)
}

/// True when the file starts with the grid-map magic.
pub fn is_grid_map_file(path: impl AsRef<Path>) -> Result<bool> {
    use std::io::Read;
    let path = path.as_ref();
    let mut head = [0u8; 4];
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    match f.read_exact(&mut head) {
        Ok(()) => Ok(head == GRID_MAP_MAGIC),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Ok(false),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Parses pose lines: `timestamp x y z qw qx qy qz`; `#` starts a comment line.
pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<Pose>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut poses: Vec<Pose> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = k + 1;
        let fields = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| err(lineno, format!("'{t}' is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        let [t, x, y, z, qw, qx, qy, qz] = fields[..] else {
            return Err(err(lineno, format!("expected 8 fields, found {}", fields.len())));
        };
        let q = [qw, qx, qy, qz];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= POSE_NORM_TOLERANCE) {
            return Err(err(lineno, format!("quaternion norm {norm} is not unit")));
        }
        // already-unit quaternions are kept verbatim so written poses round-trip exactly
        let q = if (norm - 1.0).abs() <= QUATERNION_TOLERANCE {
            q
        } else {
            q.map(|v| v / norm)
        };
        let pose = Pose::new(t, [x, y, z], q).map_err(|e| err(lineno, e.to_string()))?;
        if let Some(prev) = poses.last() {
            if pose.timestamp < prev.timestamp {
                return Err(err(
                    lineno,
                    format!("timestamp {} precedes previous {}", pose.timestamp, prev.timestamp),
                ));
            }
        }
        poses.push(pose);
    }
    Ok(poses)
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text, path)
}

/// Writes poses with shortest round-trip decimal formatting.
pub fn write_poses(poses: &[Pose], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "# timestamp x y z qw qx qy qz")?;
        for p in poses {
            let [x, y, z] = p.translation();
            let [qw, qx, qy, qz] = p.rotation();
            writeln!(w, "{} {x} {y} {z} {qw} {qx} {qy} {qz}", p.timestamp)?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}
