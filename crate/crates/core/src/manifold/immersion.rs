use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::Jet;
use crate::error::{GeoError, Result};
use crate::nn::MlpNetwork;

/// Axis-aligned box in chart coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(GeoError::Shape(
                "domain bounds must have equal, nonzero length".into(),
            ));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b))
        {
            return Err(GeoError::InvalidArgument(format!(
                "empty or infinite domain {lower:?}..{upper:?}"
            )));
        }
        Ok(DomainBox { lower, upper })
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        DomainBox {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (a, b))| *a <= *v && v <= b)
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| b - a)
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.widths().iter().product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| rng.gen_range(*a..*b))
            .collect()
    }

    /// Row-major grid with `n` points per axis, first coordinate fastest.
    pub fn grid(&self, n: usize) -> Vec<Vec<f64>> {
        assert!(n >= 2, "grid needs at least two points per axis");
        let d = self.dim();
        let total = n.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                (0..d)
                    .map(|k| {
                        let i = idx % n;
                        idx /= n;
                        self.lower[k] + (self.upper[k] - self.lower[k]) * i as f64 / (n - 1) as f64
                    })
                    .collect()
            })
            .collect()
    }
}

/// A smooth map from chart coordinates into Euclidean space.
pub trait Immersion: Send + Sync {
    fn name(&self) -> String;
    fn chart_dim(&self) -> usize;
    fn ambient_dim(&self) -> usize;
    /// Box on which the chart is well behaved, used for grids and sampling.
    fn domain(&self) -> DomainBox;
    /// Push chart jets through the map.
    fn map(&self, x: &[Jet]) -> Vec<Jet>;

    fn map_point(&self, x: &[f64]) -> Vec<f64> {
        let jets: Vec<Jet> = x.iter().map(|&v| Jet::constant(v)).collect();
        self.map(&jets).iter().map(Jet::value).collect()
    }
}

impl fmt::Debug for dyn Immersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Identity map on `R^d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Euclidean {
    pub dim: usize,
}

impl Immersion for Euclidean {
    fn name(&self) -> String {
        format!("euclidean(d={})", self.dim)
    }

    fn chart_dim(&self) -> usize {
        self.dim
    }

    fn ambient_dim(&self) -> usize {
        self.dim
    }

    fn domain(&self) -> DomainBox {
        DomainBox::cube(self.dim, -3.0, 3.0)
    }

    fn map(&self, x: &[Jet]) -> Vec<Jet> {
        x.to_vec()
    }

    fn map_point(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

/// Round sphere in polar coordinates `(θ, φ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sphere {
    pub radius: f64,
}

/// Distance kept from the poles in the sphere chart.
pub const SPHERE_POLE_MARGIN: f64 = 0.05;

impl Immersion for Sphere {
    fn name(&self) -> String {
        format!("sphere(r={})", self.radius)
    }

    fn chart_dim(&self) -> usize {
        2
    }

    fn ambient_dim(&self) -> usize {
        3
    }

    fn domain(&self) -> DomainBox {
        DomainBox {
            lower: vec![SPHERE_POLE_MARGIN, -PI],
            upper: vec![PI - SPHERE_POLE_MARGIN, PI],
        }
    }

    fn map(&self, x: &[Jet]) -> Vec<Jet> {
        let (st, ct) = (x[0].sin(), x[0].cos());
        let (sp, cp) = (x[1].sin(), x[1].cos());
        let r = self.radius;
        vec![st * cp * r, st * sp * r, ct * r]
    }
}

/// Graph of the peaks surface over `[-3, 3]^2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Peaks;

/// The peaks height function on jets.
pub fn peaks_height(x: &Jet, y: &Jet) -> Jet {
    let x2 = x * x;
    let y2 = y * y;
    let one_minus_x = 1.0 - x;
    let y_plus_1 = y + 1.0;
    let x_plus_1 = x + 1.0;
    let a = one_minus_x * one_minus_x * 3.0 * (-x2 - y_plus_1 * y_plus_1).exp();
    let b = (x / 5.0 - x2 * x - y2 * y2 * y) * 10.0 * (-x2 - y2).exp();
    let c = (-x_plus_1 * x_plus_1 - y2).exp() / 3.0;
    a - b - c
}

impl Immersion for Peaks {
    fn name(&self) -> String {
        "peaks".into()
    }

    fn chart_dim(&self) -> usize {
        2
    }

    fn ambient_dim(&self) -> usize {
        3
    }

    fn domain(&self) -> DomainBox {
        DomainBox::cube(2, -3.0, 3.0)
    }

    fn map(&self, x: &[Jet]) -> Vec<Jet> {
        vec![x[0], x[1], peaks_height(&x[0], &x[1])]
    }
}

/// A network decoder used as an immersion of its latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpDecoder {
    net: MlpNetwork,
    domain: DomainBox,
}

impl MlpDecoder {
    pub fn new(net: MlpNetwork, domain: DomainBox) -> Result<Self> {
        if net.output_dim() < net.input_dim() {
            return Err(GeoError::Shape(format!(
                "decoder maps R^{} into R^{}; an immersion needs ambient dimension >= chart dimension",
                net.input_dim(),
                net.output_dim()
            )));
        }
        if domain.dim() != net.input_dim() {
            return Err(GeoError::Shape(
                "decoder domain dimension differs from its input dimension".into(),
            ));
        }
        Ok(MlpDecoder { net, domain })
    }

    pub fn network(&self) -> &MlpNetwork {
        &self.net
    }
}

impl Immersion for MlpDecoder {
    fn name(&self) -> String {
        format!(
            "decoder({}->{})",
            self.net.input_dim(),
            self.net.output_dim()
        )
    }

    fn chart_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn ambient_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn domain(&self) -> DomainBox {
        self.domain.clone()
    }

    fn map(&self, x: &[Jet]) -> Vec<Jet> {
        self.net.forward_jets(x)
    }

    fn map_point(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x)
    }
}

/// Load a decoder immersion from a weights file. The latent domain comes from
/// the file header when present, otherwise `[-3, 3]^d`.
pub fn load_decoder(path: &Path) -> Result<MlpDecoder> {
    let file = crate::io::WeightsFile::load(path)?;
    let net = file.network()?;
    let domain = match file.header.as_ref().and_then(|h| h.domain_box.clone()) {
        Some(b) => b,
        None => DomainBox::cube(net.input_dim(), -3.0, 3.0),
    };
    MlpDecoder::new(net, domain)
}

/// Serializable choice of built-in immersion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ManifoldSpec {
    Euclidean { dim: usize },
    Sphere { radius: f64 },
    Peaks,
    Decoder { weights: PathBuf },
}

impl Default for ManifoldSpec {
    fn default() -> Self {
        ManifoldSpec::Euclidean { dim: 2 }
    }
}

impl ManifoldSpec {
    pub fn build(&self) -> Result<Box<dyn Immersion>> {
        Ok(match self {
            ManifoldSpec::Euclidean { dim } => {
                if *dim == 0 || *dim > crate::diff::MAX_VARS {
                    return Err(GeoError::InvalidArgument(format!(
                        "euclidean dimension {dim} outside 1..=8"
                    )));
                }
                Box::new(Euclidean { dim: *dim })
            }
            ManifoldSpec::Sphere { radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(GeoError::InvalidArgument(format!(
                        "sphere radius must be positive, got {radius}"
                    )));
                }
                Box::new(Sphere { radius: *radius })
            }
            ManifoldSpec::Peaks => Box::new(Peaks),
            ManifoldSpec::Decoder { weights } => Box::new(load_decoder(weights)?),
        })
    }
}
