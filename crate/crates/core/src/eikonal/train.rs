use log::{debug, info};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{eikonal_residual, flow_residual, geodesic_flow, DistanceField, ScalarField};
use crate::curvature::{psi_with, scalar_curvature, NegativeCurvature};
use crate::diff::{self, JetBatch, JetLayout, JetLoss};
use crate::error::{GeoError, Result};
use crate::io::Standardisation;
use crate::manifold::{
    christoffel_from_jet, induced_metric, metric_jet, quadratic, DomainBox, Immersion,
};
use crate::nn::{Activation, Adam, MlpNetwork};
use crate::sampling::{kde_fit, mh_sample, training_sampler, Bandwidth, DensityEstimate, MhConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Uniform,
    /// Half uniform, half drawn from a KDE of Metropolis-Hastings samples of `ψ`.
    #[default]
    Curvature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EikonalConfig {
    pub epochs_max: usize,
    /// Points drawn per epoch; each epoch is one Adam step.
    pub batch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub negative_curvature: NegativeCurvature,
    pub sampler: SamplerKind,
    pub mh: MhConfig,
    /// MH points kept for the curvature KDE.
    pub kde_points: usize,
    pub hidden: Vec<usize>,
    pub source_feature: bool,
    /// Radius of the excluded ball around the source, in standardised units.
    pub exclusion_radius: f64,
    /// Weight of the point-source term `mean ((φ̃(p) − φ̃(q))/t − 1)²` over a
    /// small shell around the source, `t` being the frozen-metric distance;
    /// 0 disables it.
    pub source_weight: f64,
    /// Shell radius in standardised units.
    pub source_radius: f64,
    /// Shell points per epoch.
    pub source_points: usize,
    /// Moving-average window for the stopping rule; 0 disables early stopping.
    pub window: usize,
    /// Relative improvement between consecutive windows below which training stops.
    pub min_improvement: f64,
    /// Points per side of the validation grid.
    pub validation_grid: usize,
    pub seed: u64,
}

impl Default for EikonalConfig {
    fn default() -> Self {
        EikonalConfig {
            epochs_max: 5000,
            batch: 20000,
            lr: 3e-4,
            lambda: 1e-3,
            alpha: 0.1,
            negative_curvature: NegativeCurvature::Clamp,
            sampler: SamplerKind::Curvature,
            mh: MhConfig {
                alpha: 1.0,
                ..MhConfig::default()
            },
            kde_points: 2000,
            hidden: vec![64, 64, 64],
            source_feature: true,
            exclusion_radius: 1e-3,
            source_weight: 1.0,
            source_radius: 0.03,
            source_points: 256,
            window: 100,
            min_improvement: 1e-3,
            validation_grid: 41,
            seed: 0,
        }
    }
}

impl EikonalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(GeoError::InvalidArgument(
                "batch and hidden widths must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.lambda >= 0.0) || !(self.alpha >= 0.0) {
            return Err(GeoError::InvalidArgument(
                "need lr > 0, lambda >= 0, alpha >= 0".into(),
            ));
        }
        if !(self.source_weight >= 0.0)
            || (self.source_weight > 0.0 && !(self.source_radius > self.exclusion_radius))
        {
            return Err(GeoError::InvalidArgument(
                "source shell must lie outside the exclusion ball".into(),
            ));
        }
        if self.validation_grid < 2 {
            return Err(GeoError::InvalidArgument(
                "validation grid needs at least 2 points per side".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EikonalLossReport {
    /// `mean ψ (ε_φ² + λ ε_∇φ)`.
    pub total: f64,
    /// Unweighted mean of `ε_φ²`.
    pub eikonal_term: f64,
    /// Unweighted mean of `ε_∇φ`.
    pub flow_term: f64,
    pub psi: Vec<f64>,
    pub epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Curvature-scaled batch loss before this epoch's update.
    pub loss: f64,
    /// Point-source shell term, unweighted.
    pub source_term: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub points: usize,
    pub loss: EikonalLossReport,
    /// Mean `|φ − oracle|` when an oracle was given.
    pub mae: Option<f64>,
    /// Fraction of points with `|v|_g ∈ [0.9, 1.1]`.
    pub unit_flow_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedField {
    pub field: DistanceField,
    pub history: Vec<EpochRecord>,
    /// Validation on the grid before the first update, when resuming.
    pub initial_validation: Option<ValidationReport>,
    pub validation: ValidationReport,
    pub stopped_early: bool,
}

fn loss_report(
    im: &dyn Immersion,
    field: &dyn ScalarField,
    batch: &[Vec<f64>],
    lambda: f64,
    alpha: f64,
    mode: NegativeCurvature,
) -> Result<EikonalLossReport> {
    if batch.is_empty() {
        return Err(GeoError::EmptySampleSet("loss batch".into()));
    }
    let terms: Vec<(f64, f64, f64)> = batch
        .par_iter()
        .map(|x| {
            let e = eikonal_residual(im, field, x)?;
            let f = flow_residual(im, field, x)?;
            let w = if alpha == 0.0 {
                1.0
            } else {
                psi_with(scalar_curvature(im, x)?, alpha, mode)
            };
            Ok((e, f, w))
        })
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let total = terms
        .iter()
        .map(|(e, f, w)| w * (e * e + lambda * f))
        .sum::<f64>()
        / n;
    Ok(EikonalLossReport {
        total,
        eikonal_term: terms.iter().map(|t| t.0 * t.0).sum::<f64>() / n,
        flow_term: terms.iter().map(|t| t.1).sum::<f64>() / n,
        psi: terms.iter().map(|t| t.2).collect(),
        epoch: 0,
    })
}

/// `(1/|X|) Σ ψ(x) [ε_φ(x)² + λ ε_∇φ(x)]` with negative curvature clamped to zero.
pub fn curvature_scaled_loss(
    im: &dyn Immersion,
    field: &dyn ScalarField,
    batch: &[Vec<f64>],
    lambda: f64,
    alpha: f64,
) -> Result<EikonalLossReport> {
    if !(lambda >= 0.0) || !(alpha >= 0.0) {
        return Err(GeoError::InvalidArgument(
            "lambda and alpha must be nonnegative".into(),
        ));
    }
    loss_report(im, field, batch, lambda, alpha, NegativeCurvature::Clamp)
}

/// The loss of [`curvature_scaled_loss`] on a network field together with its
/// exact gradient with respect to the network parameters.
pub fn loss_gradient(
    im: &dyn Immersion,
    field: &DistanceField,
    batch: &[Vec<f64>],
    lambda: f64,
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(lambda >= 0.0) || !(alpha >= 0.0) {
        return Err(GeoError::InvalidArgument(
            "lambda and alpha must be nonnegative".into(),
        ));
    }
    batch_gradient(im, field, batch, lambda, alpha, NegativeCurvature::Clamp)
}

/// Per-sample geometry for the batched loss.
struct SampleGeometry {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    /// `∂_j g^-1`, indexed by `j`.
    dg_inv: Vec<DMatrix<f64>>,
    /// `Γ^k_ij` at `[(k * d + i) * d + j]`.
    gamma: Vec<f64>,
    psi: f64,
}

fn sample_geometry(
    im: &dyn Immersion,
    x: &[f64],
    alpha: f64,
    mode: NegativeCurvature,
) -> Result<SampleGeometry> {
    let mj = metric_jet(im, x, 1)?;
    let d = mj.dim();
    let gamma = christoffel_from_jet(&mj).as_slice().to_vec();
    let psi = if alpha == 0.0 {
        1.0
    } else {
        psi_with(scalar_curvature(im, x)?, alpha, mode)
    };
    Ok(SampleGeometry {
        g: mj.g().clone(),
        g_inv: mj.g_inv().clone(),
        dg_inv: (0..d).map(|j| mj.dg_inv(j)).collect(),
        gamma,
        psi,
    })
}

/// The curvature-scaled loss as a function of the network's input jets, with
/// its exact adjoint. Residuals are invariant under `φ̃ → −φ̃`, so the
/// absolute value and the anchor drop out.
struct BatchLoss<'a> {
    geometry: &'a [SampleGeometry],
    layout: JetLayout,
    lambda: f64,
    weight: f64,
}

impl JetLoss for BatchLoss<'_> {
    fn sample_loss(&self, sample: usize, out: &[f64], adj: &mut [f64]) -> Result<f64> {
        let geo = &self.geometry[sample];
        let d = self.layout.vars;
        let (g, gi) = (&geo.g, &geo.g_inv);
        let gamma = |k: usize, i: usize, j: usize| geo.gamma[(k * d + i) * d + j];
        let a: Vec<f64> = (0..d).map(|m| out[self.layout.grad(m)]).collect();
        let hess = |m: usize, j: usize| out[self.layout.hess(m, j)];

        let v: Vec<f64> = (0..d)
            .map(|k| (0..d).map(|m| gi[(k, m)] * a[m]).sum())
            .collect();
        let e = a.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() - 1.0;
        // M^k_j = ∂_j v^k
        let mut mm = vec![0.0; d * d];
        for k in 0..d {
            for j in 0..d {
                mm[k * d + j] = (0..d)
                    .map(|m| geo.dg_inv[j][(k, m)] * a[m] + gi[(k, m)] * hess(m, j))
                    .sum();
            }
        }
        let w: Vec<f64> = (0..d)
            .map(|k| {
                let mut s: f64 = (0..d).map(|j| mm[k * d + j] * v[j]).sum();
                for i in 0..d {
                    for j in 0..d {
                        s += gamma(k, i, j) * v[i] * v[j];
                    }
                }
                s
            })
            .collect();
        let gw: Vec<f64> = (0..d)
            .map(|k| (0..d).map(|m| g[(k, m)] * w[m]).sum())
            .collect();
        let f = w.iter().zip(&gw).map(|(x, y)| x * y).sum::<f64>();
        let c = self.weight * geo.psi;
        let loss = c * (e * e + self.lambda * f);

        let wa: Vec<f64> = gw.iter().map(|x| 2.0 * c * self.lambda * x).collect();
        let vv: Vec<f64> = (0..d)
            .map(|j| {
                let mut s = 0.0;
                for k in 0..d {
                    s += wa[k] * mm[k * d + j];
                    for i in 0..d {
                        s += wa[k] * (gamma(k, i, j) + gamma(k, j, i)) * v[i];
                    }
                }
                s
            })
            .collect();
        for m in 0..d {
            let mut s: f64 = (0..d).map(|j| gi[(m, j)] * vv[j]).sum();
            for k in 0..d {
                for j in 0..d {
                    s += wa[k] * v[j] * geo.dg_inv[j][(k, m)];
                }
            }
            s += 4.0 * c * e * v[m];
            adj[self.layout.grad(m)] = s;
        }
        // ∂F/∂H_mj = Σ_k W_k v^j g^km; packed entries collect both (m, j) and (j, m).
        let ga: Vec<f64> = (0..d)
            .map(|m| (0..d).map(|k| wa[k] * gi[(k, m)]).sum())
            .collect();
        for m in 0..d {
            for j in m..d {
                let val = if m == j {
                    ga[m] * v[m]
                } else {
                    ga[m] * v[j] + ga[j] * v[m]
                };
                adj[self.layout.hess(m, j)] = val;
            }
        }
        Ok(loss)
    }
}

/// Loss and exact parameter gradient of the batched training objective.
fn batch_gradient(
    im: &dyn Immersion,
    field: &DistanceField,
    points: &[Vec<f64>],
    lambda: f64,
    alpha: f64,
    mode: NegativeCurvature,
) -> Result<(f64, Vec<f64>)> {
    let d = im.chart_dim();
    let geometry: Vec<SampleGeometry> = points
        .par_iter()
        .map(|x| sample_geometry(im, x, alpha, mode))
        .collect::<Result<_>>()?;
    let features: Vec<Vec<diff::Jet>> = points
        .par_iter()
        .map(|x| field.feature_jets(&diff::seed(x, 2)))
        .collect();
    let layout = JetLayout::new(d, 2);
    let batch = JetBatch::from_jets(&features, layout);
    let loss = BatchLoss {
        geometry: &geometry,
        layout,
        lambda,
        weight: 1.0 / points.len() as f64,
    };
    let pg = diff::loss_parameter_gradient(field.network(), &batch, &loss)?;
    Ok((pg.loss_value, pg.gradient))
}

/// Per-sample values and adjoints computed ahead of the backward pass.
struct Precomputed {
    loss: Vec<f64>,
    adjoint: Vec<f64>,
}

impl JetLoss for Precomputed {
    fn sample_loss(&self, sample: usize, _out: &[f64], adj: &mut [f64]) -> Result<f64> {
        adj[0] = self.adjoint[sample];
        Ok(self.loss[sample])
    }
}

/// Points on the shell `|δ/scale| = ρ` around the source, with their distance
/// `sqrt(δᵀ g(q) δ)` under the frozen source metric.
fn source_shell<R: Rng + ?Sized>(
    g: &DMatrix<f64>,
    source: &[f64],
    st: &Standardisation,
    rho: f64,
    n: usize,
    rng: &mut R,
) -> Vec<(Vec<f64>, f64)> {
    (0..n)
        .map(|_| {
            let z: Vec<f64> = source.iter().map(|_| rng.sample(StandardNormal)).collect();
            let zn = z
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            let delta: Vec<f64> = z
                .iter()
                .zip(&st.scale)
                .map(|(x, s)| rho * s * x / zn)
                .collect();
            let point = source.iter().zip(&delta).map(|(q, d)| q + d).collect();
            (point, quadratic(g, &delta, &delta).sqrt())
        })
        .collect()
}

/// `mean ((φ̃(p) − φ̃(q))/t − 1)²` over shell points with target distances
/// `t`, and its parameter gradient including the dependence of `φ̃(q)` on the
/// parameters. The target is signed: on `|φ̃(p) − φ̃(q)|` a plane wave is a
/// stationary point of this term.
fn source_gradient(field: &DistanceField, shell: &[(Vec<f64>, f64)]) -> Result<(f64, Vec<f64>)> {
    let d = field.dim();
    let n = shell.len() as f64;
    let mut features: Vec<Vec<diff::Jet>> = shell
        .iter()
        .map(|(x, _)| field.feature_jets(&diff::seed(x, 0)))
        .collect();
    features.push(field.feature_jets(&diff::seed(field.source_point(), 0)));
    let mut loss = Vec::with_capacity(features.len());
    let mut adjoint = Vec::with_capacity(features.len());
    let mut anchor_adj = 0.0;
    for (x, t) in shell {
        let u = field.raw(x) - field.anchor;
        let r = u / t - 1.0;
        loss.push(r * r / n);
        let a = 2.0 * r / (t * n);
        adjoint.push(a);
        anchor_adj -= a;
    }
    loss.push(0.0);
    adjoint.push(anchor_adj);
    let batch = JetBatch::from_jets(&features, JetLayout::new(d, 0));
    let pg =
        diff::loss_parameter_gradient(field.network(), &batch, &Precomputed { loss, adjoint })?;
    Ok((pg.loss_value, pg.gradient))
}

fn outside_exclusion(x: &[f64], source: &[f64], st: &Standardisation, radius: f64) -> bool {
    let r2: f64 = x
        .iter()
        .zip(source)
        .zip(&st.scale)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum();
    r2.sqrt() >= radius
}

/// Reference distance used to score a field.
pub type Oracle = dyn Fn(&[f64]) -> f64 + Sync;

/// Loss, MAE against `oracle` and unit-flow fraction on an `n × n` grid over
/// `domain`, skipping grid points inside the source exclusion ball.
pub fn validate_field(
    im: &dyn Immersion,
    field: &DistanceField,
    domain: &DomainBox,
    n: usize,
    lambda: f64,
    alpha: f64,
    exclusion_radius: f64,
    oracle: Option<&Oracle>,
) -> Result<ValidationReport> {
    let st = field.standardisation();
    let points: Vec<Vec<f64>> = domain
        .grid(n)
        .into_iter()
        .filter(|x| outside_exclusion(x, field.source_point(), st, exclusion_radius))
        .collect();
    let loss = loss_report(im, field, &points, lambda, alpha, NegativeCurvature::Clamp)?;
    let unit: Vec<bool> = points
        .par_iter()
        .map(|x| {
            let v = geodesic_flow(im, field, x)?;
            let norm = induced_metric(im, x)?.norm(&v);
            Ok((0.9..=1.1).contains(&norm))
        })
        .collect::<Result<_>>()?;
    let mae = oracle.map(|f| {
        points
            .iter()
            .map(|x| (field.phi(x) - f(x)).abs())
            .sum::<f64>()
            / points.len() as f64
    });
    Ok(ValidationReport {
        points: points.len(),
        loss,
        mae,
        unit_flow_fraction: unit.iter().filter(|u| **u).count() as f64 / points.len() as f64,
    })
}

fn curvature_density(
    im: &dyn Immersion,
    domain: &DomainBox,
    cfg: &EikonalConfig,
) -> Result<DensityEstimate> {
    let mh = MhConfig {
        seed: cfg.seed,
        ..cfg.mh.clone()
    }
    .keeping(cfg.kde_points);
    let samples = mh_sample(im, domain, &mh)?;
    info!(
        "curvature sampler: {} points, acceptance {:.3}",
        samples.len(),
        samples.acceptance_rate
    );
    kde_fit(&samples.points, &Bandwidth::Scott, Some(domain))
}

/// Fit a distance field from `source` over `domain`. Passing `init` resumes
/// from an existing field; a fresh optimiser state is used either way.
pub fn train_distance_field(
    im: &dyn Immersion,
    source: &[f64],
    domain: &DomainBox,
    cfg: &EikonalConfig,
    init: Option<DistanceField>,
) -> Result<TrainedField> {
    cfg.validate()?;
    let d = im.chart_dim();
    if source.len() != d || domain.dim() != d {
        return Err(GeoError::Shape(format!(
            "source and domain must have {d} coordinates"
        )));
    }
    if !domain.contains(source) {
        return Err(GeoError::InvalidArgument(format!(
            "source {source:?} lies outside the domain"
        )));
    }
    let resuming = init.is_some();
    let mut field = match init {
        Some(f) => {
            if f.source_point() != source {
                return Err(GeoError::InvalidArgument(
                    "resumed field has a different source point".into(),
                ));
            }
            f
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut widths = vec![d + usize::from(cfg.source_feature)];
            widths.extend(&cfg.hidden);
            widths.push(1);
            let net = MlpNetwork::random(&widths, Activation::Tanh, Activation::Identity, &mut rng);
            DistanceField::new(
                im,
                net,
                source.to_vec(),
                Standardisation::for_domain(domain),
                cfg.source_feature,
            )?
        }
    };
    let validate = |f: &DistanceField| {
        validate_field(
            im,
            f,
            domain,
            cfg.validation_grid,
            cfg.lambda,
            cfg.alpha,
            cfg.exclusion_radius,
            None,
        )
    };
    let initial_validation = if resuming {
        Some(validate(&field)?)
    } else {
        None
    };

    let density = match cfg.sampler {
        SamplerKind::Uniform => None,
        SamplerKind::Curvature => Some(curvature_density(im, domain, cfg)?),
    };
    let g_source = induced_metric(im, source)?.g;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut params = field.network().params();
    let mut adam = Adam::new(params.len(), cfg.lr);
    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs_max {
        let st = field.standardisation().clone();
        let points: Vec<Vec<f64>> =
            training_sampler(domain, density.as_ref(), cfg.batch, &mut rng)?
                .into_iter()
                .filter(|x| outside_exclusion(x, source, &st, cfg.exclusion_radius))
                .collect();
        if points.is_empty() {
            return Err(GeoError::EmptySampleSet(format!("epoch {epoch} batch")));
        }
        let (loss, grad) = batch_gradient(
            im,
            &field,
            &points,
            cfg.lambda,
            cfg.alpha,
            cfg.negative_curvature,
        )
        .map_err(|e| match e {
            GeoError::Training { sample, .. } => GeoError::Training { epoch, sample },
            other => other,
        })?;
        let mut grad = grad;
        let mut source_term = 0.0;
        if cfg.source_weight > 0.0 {
            let shell = source_shell(
                &g_source,
                source,
                &st,
                cfg.source_radius,
                cfg.source_points,
                &mut rng,
            );
            let (l, g) = source_gradient(&field, &shell)?;
            source_term = l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += cfg.source_weight * b;
            }
        }
        if !loss.is_finite() || !source_term.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(GeoError::Training { epoch, sample: 0 });
        }
        history.push(EpochRecord {
            epoch,
            loss,
            source_term,
        });
        adam.step(&mut params, &grad);
        field.set_params(&params)?;
        if epoch % 100 == 0 {
            debug!("epoch {epoch}: loss {loss:e}");
        }
        if should_stop(&history, cfg.window, cfg.min_improvement) {
            info!(
                "stopping at epoch {epoch}: moving-average loss improved by less than {}",
                cfg.min_improvement
            );
            stopped_early = true;
            break;
        }
    }
    let mut validation = validate(&field)?;
    validation.loss.epoch = history.len();
    Ok(TrainedField {
        field,
        history,
        initial_validation,
        validation,
        stopped_early,
    })
}

/// True once the mean loss over the last `window` epochs improves on the
/// preceding window by less than the relative amount `min_improvement`.
fn should_stop(history: &[EpochRecord], window: usize, min_improvement: f64) -> bool {
    if window == 0 || history.len() < 2 * window {
        return false;
    }
    let n = history.len();
    let mean =
        |r: &[EpochRecord]| r.iter().map(|h| h.loss + h.source_term).sum::<f64>() / r.len() as f64;
    let recent = mean(&history[n - window..]);
    let before = mean(&history[n - 2 * window..n - window]);
    (before - recent) < min_improvement * before
}
