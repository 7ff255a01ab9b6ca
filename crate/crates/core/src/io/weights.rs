//! JSON weights format shared by decoders and trained distance fields.
//!
//! ```json
//! {
//!   "format": "geoflow-mlp/1",
//!   "input_dim": 2,
//!   "output_dim": 1,
//!   "layers": [{"weight": [[...], ...], "bias": [...], "activation": "tanh"}],
//!   "header": {"manifold": {...}, "source_point": [0.0, 0.0], ...}
//! }
//! ```
//!
//! Weights are row-major `[outputs][inputs]`. Numbers are written in the
//! shortest decimal form that parses back to the same double.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::manifold::{DomainBox, ManifoldSpec};
use crate::nn::{Activation, Layer, MlpNetwork};

pub const WEIGHTS_FORMAT: &str = "geoflow-mlp/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Affine map `x ↦ (x − center) / scale` applied to chart inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardisation {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardisation {
    /// Maps `domain` onto `[-1, 1]^d`.
    pub fn for_domain(domain: &DomainBox) -> Self {
        Standardisation {
            center: domain.center(),
            scale: domain.widths().iter().map(|w| 0.5 * w).collect(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(v, (c, s))| (v - c) / s)
            .collect()
    }
}

/// Metadata stored with a trained distance field.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifold: Option<ManifoldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_point: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_box: Option<DomainBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardisation: Option<Standardisation>,
    /// Whether the network takes the metric distance to the source as an extra input.
    #[serde(default)]
    pub source_feature: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub format: String,
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<FieldHeader>,
}

impl WeightsFile {
    pub fn from_network(net: &MlpNetwork, header: Option<FieldHeader>) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| LayerRecord {
                weight: l.weight.outer_iter().map(|r| r.to_vec()).collect(),
                bias: l.bias.to_vec(),
                activation: l.activation,
            })
            .collect();
        WeightsFile {
            format: WEIGHTS_FORMAT.into(),
            input_dim: net.input_dim(),
            output_dim: net.output_dim(),
            layers,
            header,
        }
    }

    pub fn network(&self) -> Result<MlpNetwork> {
        if self.format != WEIGHTS_FORMAT {
            return Err(GeoError::Parse(format!(
                "unsupported weights format `{}`",
                self.format
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, rec) in self.layers.iter().enumerate() {
            let rows = rec.weight.len();
            let cols = rec.weight.first().map_or(0, Vec::len);
            if rec.weight.iter().any(|r| r.len() != cols) {
                return Err(GeoError::Shape(format!("layer {i}: ragged weight matrix")));
            }
            let flat: Vec<f64> = rec.weight.iter().flatten().copied().collect();
            let weight = Array2::from_shape_vec((rows, cols), flat)
                .map_err(|e| GeoError::Shape(e.to_string()))?;
            layers.push(Layer {
                weight,
                bias: Array1::from_vec(rec.bias.clone()),
                activation: rec.activation,
            });
        }
        let net = MlpNetwork::new(layers)?;
        if net.input_dim() != self.input_dim || net.output_dim() != self.output_dim {
            return Err(GeoError::Shape(format!(
                "declared {}->{} but layers map {}->{}",
                self.input_dim,
                self.output_dim,
                net.input_dim(),
                net.output_dim()
            )));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s =
            serde_json::to_string_pretty(self).map_err(|e| GeoError::Parse(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GeoError::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| GeoError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = MlpNetwork::random(&[2, 7, 1], Activation::Tanh, Activation::Identity, &mut rng);
        let header = FieldHeader {
            source_point: Some(vec![0.1, 1.0 / 3.0]),
            final_loss: Some(1e-7),
            ..Default::default()
        };
        let a = WeightsFile::from_network(&net, Some(header))
            .to_json()
            .unwrap();
        let back = WeightsFile::from_json(&a).unwrap();
        assert_eq!(back.network().unwrap(), net);
        assert_eq!(back.to_json().unwrap(), a);
    }

    #[test]
    fn missing_bias_is_a_parse_error() {
        let text = r#"{"format":"geoflow-mlp/1","input_dim":1,"output_dim":1,
            "layers":[{"weight":[[1.0]],"activation":"identity"}]}"#;
        assert!(matches!(
            WeightsFile::from_json(text),
            Err(GeoError::Parse(_))
        ));
    }

    #[test]
    fn unknown_activation_is_rejected() {
        let text = r#"{"format":"geoflow-mlp/1","input_dim":1,"output_dim":1,
            "layers":[{"weight":[[1.0]],"bias":[0.0],"activation":"relu"}]}"#;
        assert!(matches!(
            WeightsFile::from_json(text),
            Err(GeoError::Parse(_))
        ));
    }

    #[test]
    fn declared_dims_must_match() {
        let text = r#"{"format":"geoflow-mlp/1","input_dim":2,"output_dim":1,
            "layers":[{"weight":[[1.0]],"bias":[0.0],"activation":"identity"}]}"#;
        let f = WeightsFile::from_json(text).unwrap();
        assert!(matches!(f.network(), Err(GeoError::Shape(_))));
    }
}
