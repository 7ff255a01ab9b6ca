use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curves::MllmConfig;
use crate::eikonal::EikonalConfig;
use crate::error::{GeoError, Result};
use crate::geodesic::{IntegratorConfig, ShootingConfig};
use crate::manifold::{DomainBox, Immersion, ManifoldSpec};
use crate::sampling::MhConfig;

/// Where commands write their results. Unset paths go to standard output
/// or are skipped, depending on the command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub history: Option<PathBuf>,
}

/// Every tunable of a run. Missing TOML keys take the defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifold: ManifoldSpec,
    /// Chart box; the manifold's own domain when absent.
    pub domain: Option<DomainBox>,
    pub integrator: IntegratorConfig,
    pub shooting: ShootingConfig,
    pub mllm: MllmConfig,
    pub sampler: MhConfig,
    pub eikonal: EikonalConfig,
    pub seed: Option<u64>,
    pub output: OutputPaths,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GeoError::Parse(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GeoError::Parse(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeoError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The configured domain, checked against the chart dimension, or the
    /// immersion's default domain.
    pub fn domain_for(&self, im: &dyn Immersion) -> Result<DomainBox> {
        match &self.domain {
            Some(d) if d.dim() != im.chart_dim() => Err(GeoError::Shape(format!(
                "domain has {} coordinates, chart has {}",
                d.dim(),
                im.chart_dim()
            ))),
            Some(d) => Ok(d.clone()),
            None => Ok(im.domain()),
        }
    }
}
