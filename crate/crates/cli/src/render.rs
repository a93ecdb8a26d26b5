//! Grayscale PNG rendering of single layers.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use evigrid::grid::layers;
use evigrid::{Error, MultiLayerGridMap, Result};

use crate::config::Palette;

/// Linear map of `[min, max]` onto `0..=255`, rounding half up. Values
/// outside the range saturate; NaN renders as 0.
pub fn quantize(v: f64, min: f64, max: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    let t = if max > min {
        ((v - min) / (max - min)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (t * 255.0 + 0.5).floor() as u8
}

/// Display range: beliefs and masses default to `[0, 1]`, other layers to
/// the finite data extent. Explicit bounds override either end.
pub fn display_range(name: &str, values: &[f32], min: Option<f64>, max: Option<f64>) -> Result<(f64, f64)> {
    let (lo, hi) = if layers::is_belief(name) {
        (0.0, 1.0)
    } else {
        let finite = values.iter().filter(|v| v.is_finite()).map(|&v| v as f64);
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if lo > hi {
            (0.0, 1.0)
        } else {
            (lo, hi)
        }
    };
    let (lo, hi) = (min.unwrap_or(lo), max.unwrap_or(hi));
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::InvalidParameter(format!("invalid display range [{lo}, {hi}]")));
    }
    Ok((lo, hi))
}

/// 8-bit pixels of `name`, row 0 holding the cells with the largest y.
pub fn render_layer(
    map: &MultiLayerGridMap,
    name: &str,
    min: Option<f64>,
    max: Option<f64>,
    palette: Palette,
) -> Result<Vec<u8>> {
    let layer = map.require(name)?;
    let (lo, hi) = display_range(name, &layer.values, min, max)?;
    let (w, h) = (map.spec().width(), map.spec().height());
    let mut pixels = Vec::with_capacity(w * h);
    for row in layer.values.chunks_exact(w).rev() {
        pixels.extend(row.iter().map(|&v| {
            let p = quantize(v as f64, lo, hi);
            match palette {
                Palette::Gray => p,
                Palette::InvertedGray => 255 - p,
            }
        }));
    }
    Ok(pixels)
}

pub fn write_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let png_err = |e: png::EncodingError| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let file = File::create(path).map_err(io_err)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)
}
