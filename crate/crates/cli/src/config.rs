use std::path::Path;

use serde::{Deserialize, Serialize};

use evigrid::fusion::FusionConfig;
use evigrid::grid::{DEFAULT_CELLS_PER_AXIS, DEFAULT_CELL_SIZE, DEFAULT_ORIGIN};
use evigrid::ground::GroundFitConfig;
use evigrid::raster::SensorModelConfig;
use evigrid::sim::ScanConfig;
use evigrid::{Error, GridSpec, Result};

/// Default half-width of the frame window, in frames on each side.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl Default for GridConfig {
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

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.cell_size, self.width, self.height, self.origin_x, self.origin_y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Palette {
    /// Low values black, high values white.
    #[default]
    Gray,
    /// Low values white, high values black.
    InvertedGray,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub palette: Palette,
}

/// Everything a pipeline run depends on; every field has a default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Frames on each side of the reference frame considered for fusion.
    pub k: usize,
    pub grid: GridConfig,
    pub sensor: SensorModelConfig,
    pub ground: GroundFitConfig,
    pub fusion: FusionConfig,
    pub render: RenderConfig,
    /// Scan pattern used by `simulate`.
    pub scan: ScanConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            grid: GridConfig::default(),
            sensor: SensorModelConfig::default(),
            ground: GroundFitConfig::default(),
            fusion: FusionConfig::default(),
            render: RenderConfig::default(),
            scan: ScanConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                Self::parse(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.spec()?;
        self.sensor.validate()?;
        self.ground.validate()?;
        self.fusion.validate()?;
        self.scan.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::parse("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.k = 2;
        cfg.grid.width = 100;
        cfg.fusion.radius = 25.0;
        cfg.render.palette = Palette::InvertedGray;
        assert_eq!(PipelineConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_sections_and_rejections() {
        let cfg = PipelineConfig::parse("[grid]\ncell_size = 0.3\n[sensor]\np_fp = 0.2\n").unwrap();
        assert_eq!(cfg.grid.cell_size, 0.3);
        assert_eq!(cfg.grid.width, DEFAULT_CELLS_PER_AXIS);
        assert_eq!(cfg.sensor.p_fp, 0.2);
        assert!(PipelineConfig::parse("[grid]\ncell_sise = 0.3\n").is_err());
        assert!(PipelineConfig::parse("[sensor]\np_fp = 1.5\n").is_err());
        assert!(PipelineConfig::parse("[grid]\nwidth = 0\n").is_err());
    }
}
