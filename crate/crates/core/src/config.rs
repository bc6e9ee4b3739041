//! Engine configuration: one TOML file with a section per module. Every
//! key has a default, so an empty file is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusionParams;
use crate::geometry::{DepthSource, GeometryError, SinusoidLadder, Umpe};
use crate::memory::{Mcma, MemoryBank};
use crate::metrics::{LossWeights, BOUNDARY_FRACTION};
use crate::protocol::ProtocolParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("override `{0}` must look like section.key=value")]
    Override(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Wavelength of the lowest image sinusoid band, pixels.
    pub image_base_wavelength: f64,
    /// Wavelength of the lowest LiDAR sinusoid band, meters.
    pub lidar_base_wavelength: f64,
    pub depth_bins: usize,
    pub depth_near: f64,
    pub depth_far: f64,
    pub encoding_dim: usize,
    pub mlp_seed: u64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            image_base_wavelength: 32.0,
            lidar_base_wavelength: 2.0,
            depth_bins: 8,
            depth_near: 1.0,
            depth_far: 60.0,
            encoding_dim: 48,
            mlp_seed: 0,
        }
    }
}

impl GeometryConfig {
    pub fn umpe(&self) -> Result<Umpe, GeometryError> {
        let mut u = Umpe::seeded(self.encoding_dim, self.mlp_seed)?;
        u.image_ladder = SinusoidLadder { base_wavelength: self.image_base_wavelength };
        u.lidar_ladder = SinusoidLadder { base_wavelength: self.lidar_base_wavelength };
        Ok(u)
    }

    pub fn depth_source(&self) -> Result<DepthSource, GeometryError> {
        DepthSource::log_bins(self.depth_bins, self.depth_near, self.depth_far)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub unprompted_capacity: usize,
    pub prompted_capacity: usize,
    pub heads: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self { unprompted_capacity: 6, prompted_capacity: 2, heads: 1 }
    }
}

impl MemoryConfig {
    pub fn bank(&self) -> MemoryBank {
        MemoryBank::new(self.unprompted_capacity, self.prompted_capacity)
    }

    pub fn mcma(&self, geometry: &GeometryConfig) -> Result<Mcma, GeometryError> {
        let mut m = Mcma::new(geometry.umpe()?);
        m.heads = self.heads;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub voxel_size: f64,
    /// Rays stop after this distance, meters.
    pub max_range: f64,
    /// 0 = all cores.
    pub threads: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self { voxel_size: 0.1, max_range: 80.0, threads: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub boundary_fraction: f64,
    pub loss: LossWeights,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { boundary_fraction: BOUNDARY_FRACTION, loss: LossWeights::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub clicks_per_prompt: usize,
    pub frame_budget: usize,
    pub iou_threshold: f64,
    pub lidar_click_radius: f64,
    pub seed: u64,
    pub corruption_rate: f64,
    pub corruption_magnitude: u32,
    /// Camera whose masks drive the protocol simulation.
    pub camera: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let p = ProtocolParams::default();
        Self {
            clicks_per_prompt: p.clicks_per_prompt,
            frame_budget: p.frame_budget,
            iou_threshold: p.iou_threshold,
            lidar_click_radius: p.lidar_click_radius,
            seed: 0,
            corruption_rate: 0.2,
            corruption_magnitude: 2,
            camera: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub address: String,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { address: "127.0.0.1:8080".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub geometry: GeometryConfig,
    pub memory: MemoryConfig,
    pub recon: ReconConfig,
    pub fusion: FusionParams,
    pub metrics: MetricsConfig,
    pub protocol: EvalConfig,
    pub serve: ServeConfig,
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl Config {
    /// Parses TOML text and applies `section.key=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            let (path, value) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let keys: Vec<&str> = path.trim().split('.').collect();
            if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
                return Err(ConfigError::Override(o.clone()));
            }
            let mut cur = &mut table;
            for k in &keys[..keys.len() - 1] {
                cur = cur
                    .entry(k.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()))
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::Override(o.clone()))?;
            }
            cur.insert(keys[keys.len() - 1].to_string(), parse_value(value.trim()));
        }
        let cfg: Config = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Read { path: p.display().to_string(), message: e.to_string() })?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn protocol_params(&self) -> ProtocolParams {
        ProtocolParams {
            clicks_per_prompt: self.protocol.clicks_per_prompt,
            frame_budget: self.protocol.frame_budget,
            iou_threshold: self.protocol.iou_threshold,
            boundary_fraction: self.metrics.boundary_fraction,
            lidar_click_radius: self.protocol.lidar_click_radius,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.fusion.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.recon.voxel_size > 0.0 && self.recon.voxel_size.is_finite()) {
            return bad(format!("recon.voxel_size must be positive, got {}", self.recon.voxel_size));
        }
        if !(self.recon.max_range > 0.0) {
            return bad("recon.max_range must be positive".into());
        }
        if self.geometry.encoding_dim == 0 || self.geometry.encoding_dim % 12 != 0 {
            return bad(format!("geometry.encoding_dim must be a positive multiple of 12, got {}", self.geometry.encoding_dim));
        }
        if self.memory.unprompted_capacity == 0 || self.memory.prompted_capacity == 0 || self.memory.heads == 0 {
            return bad("memory capacities and heads must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.protocol.corruption_rate) {
            return bad("protocol.corruption_rate must be in [0, 1]".into());
        }
        if self.protocol.frame_budget == 0 {
            return bad("protocol.frame_budget must be at least 1".into());
        }
        Ok(())
    }
}
