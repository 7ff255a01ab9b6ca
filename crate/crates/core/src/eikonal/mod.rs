//! Neural distance fields solving the Eikonal equation
//! `g^ij ∂_iφ ∂_jφ = 1` on a chart, regularised by the geodesic-flow residual
//! `|∇_v v|_g²` with `v^i = g^ij ∂_jφ`.
//!
//! A field is `φ(p) = |φ̃(f(p)) − φ̃(f(q))|` for a network `φ̃`, source `q`
//! and input features `f`. The features are the standardised chart
//! coordinates, optionally followed by the metric distance to the source
//! measured with the frozen metric `g(q)`. Without that last feature the
//! network can settle on a plane wave `|n·(p − q)|`, which satisfies both
//! residuals exactly in flat space but is not a distance function.

mod train;

pub use train::{
    curvature_scaled_loss, loss_gradient, train_distance_field, validate_field, EikonalConfig,
    EikonalLossReport, EpochRecord, Oracle, SamplerKind, TrainedField, ValidationReport,
};

use nalgebra::DMatrix;

use crate::diff::{self, Jet};
use crate::error::{GeoError, Result};
use crate::io::{FieldHeader, Standardisation, WeightsFile};
use crate::manifold::{
    christoffel_from_jet, induced_metric, metric_jet, quadratic, DomainBox, Immersion, ManifoldSpec,
};
use crate::nn::MlpNetwork;

/// Points closer than this to the source are rejected by residual evaluation.
pub const SOURCE_EXCLUSION: f64 = 1e-6;

/// A scalar function on the chart that can report its derivatives.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;
    /// Jet of the field at `x` up to `order` (at most 2).
    fn jet(&self, x: &[f64], order: usize) -> Result<Jet>;
    /// Point where the field is not smooth, if any.
    fn source(&self) -> Option<&[f64]> {
        None
    }
}

/// A field given as a closure on jets, for analytic test fields.
pub struct FnField<F> {
    dim: usize,
    source: Option<Vec<f64>>,
    f: F,
}

impl<F: Fn(&[Jet]) -> Jet + Sync> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnField {
            dim,
            source: None,
            f,
        }
    }

    pub fn with_source(mut self, source: Vec<f64>) -> Self {
        self.source = Some(source);
        self
    }
}

impl<F: Fn(&[Jet]) -> Jet + Sync> ScalarField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        Ok(diff::evaluate_with_jets(|s| vec![(self.f)(s)], x, order)?[0])
    }

    fn source(&self) -> Option<&[f64]> {
        self.source.as_deref()
    }
}

/// Metric distance to the source under the frozen metric `g(q)`, used as an
/// extra network input.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceFeature {
    pub metric: DMatrix<f64>,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    net: MlpNetwork,
    source: Vec<f64>,
    standardisation: Standardisation,
    feature: Option<SourceFeature>,
    /// `φ̃` at the source, cached.
    anchor: f64,
}

impl DistanceField {
    pub fn new(
        im: &dyn Immersion,
        net: MlpNetwork,
        source: Vec<f64>,
        standardisation: Standardisation,
        source_feature: bool,
    ) -> Result<Self> {
        let d = im.chart_dim();
        if source.len() != d
            || standardisation.center.len() != d
            || standardisation.scale.len() != d
        {
            return Err(GeoError::Shape(format!(
                "source and standardisation must have {d} components"
            )));
        }
        if standardisation.scale.iter().any(|s| !(*s > 0.0)) {
            return Err(GeoError::InvalidArgument(
                "standardisation scales must be positive".into(),
            ));
        }
        let feature = if source_feature {
            let m = induced_metric(im, &source)?;
            let scale = standardisation.scale.iter().sum::<f64>() / d as f64;
            Some(SourceFeature { metric: m.g, scale })
        } else {
            None
        };
        let inputs = d + usize::from(source_feature);
        if net.input_dim() != inputs || net.output_dim() != 1 {
            return Err(GeoError::Shape(format!(
                "distance network must map R^{inputs} to R, got R^{} to R^{}",
                net.input_dim(),
                net.output_dim()
            )));
        }
        let mut field = DistanceField {
            net,
            source,
            standardisation,
            feature,
            anchor: 0.0,
        };
        field.anchor = field.raw(&field.source.clone());
        Ok(field)
    }

    pub fn network(&self) -> &MlpNetwork {
        &self.net
    }

    pub fn source_point(&self) -> &[f64] {
        &self.source
    }

    pub fn standardisation(&self) -> &Standardisation {
        &self.standardisation
    }

    pub fn has_source_feature(&self) -> bool {
        self.feature.is_some()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params(params)?;
        self.anchor = self.raw(&self.source.clone());
        Ok(())
    }

    /// Network inputs as jets of the chart point.
    pub fn feature_jets(&self, x: &[Jet]) -> Vec<Jet> {
        let st = &self.standardisation;
        let mut out: Vec<Jet> = x
            .iter()
            .zip(st.center.iter().zip(&st.scale))
            .map(|(v, (c, s))| (v - *c) / *s)
            .collect();
        if let Some(f) = &self.feature {
            let delta: Vec<Jet> = x.iter().zip(&self.source).map(|(v, q)| v - *q).collect();
            let d = delta.len();
            let mut r2 = Jet::constant(0.0);
            for i in 0..d {
                for j in 0..d {
                    r2 += delta[i] * delta[j] * f.metric[(i, j)];
                }
            }
            out.push(r2.sqrt() / f.scale);
        }
        out
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        let jets: Vec<Jet> = x.iter().map(|&v| Jet::constant(v)).collect();
        self.feature_jets(&jets).iter().map(Jet::value).collect()
    }

    /// `φ̃(f(x))`.
    pub fn raw(&self, x: &[f64]) -> f64 {
        self.net.forward(&self.features(x))[0]
    }

    /// `φ(x) = |φ̃(f(x)) − φ̃(f(q))|`; exactly zero at the source.
    pub fn phi(&self, x: &[f64]) -> f64 {
        (self.raw(x) - self.anchor).abs()
    }

    /// Save with a header describing the source, domain and manifold.
    pub fn to_weights(
        &self,
        manifold: Option<ManifoldSpec>,
        domain: Option<DomainBox>,
    ) -> WeightsFile {
        let header = FieldHeader {
            manifold,
            source_point: Some(self.source.clone()),
            domain_box: domain,
            standardisation: Some(self.standardisation.clone()),
            source_feature: self.feature.is_some(),
            final_loss: None,
            epochs: None,
        };
        WeightsFile::from_network(&self.net, Some(header))
    }

    /// Rebuild a field from a weights file carrying a field header.
    pub fn from_weights(im: &dyn Immersion, file: &WeightsFile) -> Result<Self> {
        let header = file
            .header
            .as_ref()
            .ok_or_else(|| GeoError::Parse("weights file has no distance-field header".into()))?;
        let source = header
            .source_point
            .clone()
            .ok_or_else(|| GeoError::Parse("header lacks source_point".into()))?;
        let st = match &header.standardisation {
            Some(s) => s.clone(),
            None => Standardisation {
                center: vec![0.0; source.len()],
                scale: vec![1.0; source.len()],
            },
        };
        DistanceField::new(im, file.network()?, source, st, header.source_feature)
    }
}

impl ScalarField for DistanceField {
    fn dim(&self) -> usize {
        self.source.len()
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        let out =
            diff::evaluate_with_jets(|s| self.net.forward_jets(&self.feature_jets(s)), x, order)?;
        let t = out[0] - self.anchor;
        Ok(if t.value() < 0.0 { -t } else { t })
    }

    fn source(&self) -> Option<&[f64]> {
        Some(&self.source)
    }
}

fn check_smooth(field: &dyn ScalarField, x: &[f64]) -> Result<()> {
    if let Some(q) = field.source() {
        let dist = x
            .iter()
            .zip(q)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        if dist <= SOURCE_EXCLUSION {
            return Err(GeoError::NonSmoothPoint {
                point: x.to_vec(),
                radius: SOURCE_EXCLUSION,
            });
        }
    }
    Ok(())
}

/// `ε_φ = g^ij ∂_iφ ∂_jφ − 1`.
pub fn eikonal_residual(im: &dyn Immersion, field: &dyn ScalarField, x: &[f64]) -> Result<f64> {
    check_smooth(field, x)?;
    let j = field.jet(x, 1)?;
    let m = induced_metric(im, x)?;
    Ok(quadratic(&m.g_inv, j.gradient(), j.gradient()) - 1.0)
}

/// `v^i = g^ij ∂_jφ`.
pub fn geodesic_flow(im: &dyn Immersion, field: &dyn ScalarField, x: &[f64]) -> Result<Vec<f64>> {
    check_smooth(field, x)?;
    let j = field.jet(x, 1)?;
    Ok(induced_metric(im, x)?.raise(j.gradient()))
}

/// `ε_∇φ = |v^j ∂_j v + Γ(v, v)|_g²` with `v = g^-1 ∇φ`.
pub fn flow_residual(im: &dyn Immersion, field: &dyn ScalarField, x: &[f64]) -> Result<f64> {
    check_smooth(field, x)?;
    let j = field.jet(x, 2)?;
    let mj = metric_jet(im, x, 1)?;
    let d = mj.dim();
    let a = j.gradient();
    let gi = mj.g_inv();
    let v: Vec<f64> = (0..d)
        .map(|k| (0..d).map(|m| gi[(k, m)] * a[m]).sum())
        .collect();
    let dgi: Vec<DMatrix<f64>> = (0..d).map(|l| mj.dg_inv(l)).collect();
    let gamma = christoffel_from_jet(&mj);
    let turn = gamma.contract(&v, &v);
    let w: Vec<f64> = (0..d)
        .map(|k| {
            let mut s = turn[k];
            for jj in 0..d {
                // ∂_j v^k = (∂_j g^-1)^km a_m + g^km ∂_m∂_j φ
                let mut dv = 0.0;
                for m in 0..d {
                    dv += dgi[jj][(k, m)] * a[m] + gi[(k, m)] * j.d2(m, jj);
                }
                s += v[jj] * dv;
            }
            s
        })
        .collect();
    Ok(quadratic(mj.g(), &w, &w))
}
