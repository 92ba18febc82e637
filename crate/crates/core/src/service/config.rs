//! Engine configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lift::{LiftConfig, SelectionParams};
use crate::oracle::NoiseModel;

pub const DATA_DIR_ENV: &str = "MATLIFT_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Lifting view resolution (square).
    pub resolution: u32,
    /// Number of Fibonacci lifting views.
    pub views: usize,
    pub fov_deg: f64,
    /// Camera distance in units of the mesh bounding radius.
    pub radius_factor: f64,
    /// Resolution of frames served to clients.
    pub view_resolution: u32,
    /// Novel views per evaluation click.
    pub eval_views: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            resolution: 256,
            views: 30,
            fov_deg: 40.0,
            radius_factor: 3.0,
            view_resolution: 512,
            eval_views: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Ground-truth material ids degraded by the noise model.
    #[default]
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub k: usize,
    pub threshold: f32,
    pub n_probe: usize,
    pub exact: bool,
    pub n_clusters: usize,
    pub stride: u32,
    pub duplicate_click_frame: bool,
    pub seed: u64,
    pub oracle: OracleKind,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        let p = SelectionParams::default();
        let l = LiftConfig::default();
        Self {
            k: p.k,
            threshold: p.threshold,
            n_probe: p.n_probe,
            exact: p.exact,
            n_clusters: l.n_clusters,
            stride: l.stride,
            duplicate_click_frame: l.duplicate_click_frame,
            seed: l.seed,
            oracle: OracleKind::Synthetic,
        }
    }
}

impl SelectionConfig {
    pub fn params(&self) -> SelectionParams {
        SelectionParams {
            k: self.k,
            threshold: self.threshold,
            n_probe: self.n_probe,
            exact: self.exact,
        }
    }

    pub fn lift(&self) -> LiftConfig {
        LiftConfig {
            n_clusters: self.n_clusters,
            stride: self.stride,
            duplicate_click_frame: self.duplicate_click_frame,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub port: u16,
    /// Session storage root; the environment variable takes precedence.
    pub data_dir: Option<PathBuf>,
    /// Directory holding `<asset_id>.obj` files.
    pub assets_dir: PathBuf,
    /// Default output directory of CLI commands.
    pub output_dir: PathBuf,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            data_dir: None,
            assets_dir: PathBuf::from("assets"),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub render: RenderConfig,
    pub selection: SelectionConfig,
    pub noise: NoiseModel,
    pub service: ServiceConfig,
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies a partial JSON object of the same shape, rejecting unknown keys.
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<Self> {
        let mut base = serde_json::to_value(self).expect("config serializes");
        merge(&mut base, overrides);
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.render;
        if r.resolution == 0 || r.view_resolution == 0 {
            return Err(Error::Config("resolutions must be positive".into()));
        }
        if r.views == 0 || r.eval_views == 0 {
            return Err(Error::Config("view counts must be positive".into()));
        }
        if !(r.fov_deg > 0.0 && r.fov_deg < 180.0) {
            return Err(Error::Config(format!("fov_deg {} outside (0, 180)", r.fov_deg)));
        }
        if !(r.radius_factor > 1.0 && r.radius_factor.is_finite()) {
            return Err(Error::Config("radius_factor must exceed 1".into()));
        }
        self.selection
            .params()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.selection
            .lift()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.noise.validate()
    }

    /// `MATLIFT_DATA_DIR`, else `[service] data_dir`, else `./matlift-data`.
    pub fn data_dir(&self) -> PathBuf {
        std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .or_else(|| self.service.data_dir.clone())
            .unwrap_or_else(|| PathBuf::from("matlift-data"))
    }
}

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}
