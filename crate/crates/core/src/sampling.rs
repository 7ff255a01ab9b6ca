//! Curvature-weighted Metropolis-Hastings sampling, Gaussian kernel density
//! estimates, and the half-uniform, half-KDE training distribution.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use statrs::function::erf::erf;

use crate::curvature::{curvature_at, psi_with, NegativeCurvature};
use crate::error::{GeoError, Result};
use crate::manifold::{DomainBox, Immersion};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhConfig {
    pub chains: usize,
    pub burn_in: usize,
    /// Steps per chain, burn-in included.
    pub steps_per_chain: usize,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
    /// Truncate the pooled set to this many points.
    pub n_keep: Option<usize>,
    pub proposal_sigma: f64,
    pub alpha: f64,
    pub negative_curvature: NegativeCurvature,
    pub seed: u64,
}

impl Default for MhConfig {
    fn default() -> Self {
        MhConfig {
            chains: 8,
            burn_in: 500,
            steps_per_chain: 5500,
            thin: 1,
            n_keep: None,
            proposal_sigma: 0.3,
            alpha: 0.1,
            negative_curvature: NegativeCurvature::Clamp,
            seed: 0,
        }
    }
}

impl MhConfig {
    /// Size the chains so that exactly `n` points are kept.
    pub fn keeping(mut self, n: usize) -> Self {
        let chains = self.chains.max(1);
        let per_chain = n.div_ceil(chains);
        self.steps_per_chain = self.burn_in + per_chain * self.thin.max(1);
        self.n_keep = Some(n);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub points: Vec<Vec<f64>>,
    pub chain_ids: Vec<usize>,
    /// Target weight at each point.
    pub weights: Vec<f64>,
    /// Scalar curvature at each point (zero for non-curvature targets).
    pub scalar: Vec<f64>,
    pub acceptance_rate: f64,
    /// Gelman-Rubin potential scale reduction per coordinate.
    pub r_hat: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

struct ChainOutput {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    extra: Vec<f64>,
    proposed: usize,
    accepted: usize,
}

/// Random-walk Metropolis-Hastings on an unnormalised target restricted to
/// `domain`. The target returns `(weight, extra)`; `None` or a nonpositive
/// weight rejects the proposal. Chains run concurrently and pool in chain order.
pub fn mh_sample_target<F>(domain: &DomainBox, cfg: &MhConfig, target: F) -> Result<SampleSet>
where
    F: Fn(&[f64]) -> Option<(f64, f64)> + Sync,
{
    if cfg.chains == 0 {
        return Err(GeoError::InvalidArgument("need at least one chain".into()));
    }
    if !(cfg.proposal_sigma > 0.0) {
        return Err(GeoError::InvalidArgument(
            "proposal_sigma must be positive".into(),
        ));
    }
    if cfg.steps_per_chain <= cfg.burn_in {
        return Err(GeoError::EmptySampleSet(format!(
            "burn-in of {} consumes all {} steps of each chain",
            cfg.burn_in, cfg.steps_per_chain
        )));
    }
    let thin = cfg.thin.max(1);
    let outputs: Vec<Result<ChainOutput>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c as u64 + 1);
            run_chain(domain, cfg, thin, &target, &mut rng)
        })
        .collect();

    let mut set = SampleSet {
        points: Vec::new(),
        chain_ids: Vec::new(),
        weights: Vec::new(),
        scalar: Vec::new(),
        acceptance_rate: 0.0,
        r_hat: Vec::new(),
    };
    let (mut proposed, mut accepted) = (0usize, 0usize);
    let mut per_chain = Vec::with_capacity(cfg.chains);
    for (c, out) in outputs.into_iter().enumerate() {
        let out = out?;
        proposed += out.proposed;
        accepted += out.accepted;
        set.chain_ids
            .extend(std::iter::repeat_n(c, out.points.len()));
        set.points.extend(out.points.iter().cloned());
        set.weights.extend(out.weights);
        set.scalar.extend(out.extra);
        per_chain.push(out.points);
    }
    set.acceptance_rate = accepted as f64 / proposed.max(1) as f64;
    if set.acceptance_rate < 0.01 {
        return Err(GeoError::LowAcceptance {
            rate: set.acceptance_rate,
        });
    }
    set.r_hat = gelman_rubin(&per_chain);
    info!(
        "MH acceptance {:.3}, R-hat {:?}",
        set.acceptance_rate, set.r_hat
    );
    if let Some(n) = cfg.n_keep {
        set.points.truncate(n);
        set.chain_ids.truncate(n);
        set.weights.truncate(n);
        set.scalar.truncate(n);
    }
    if set.points.is_empty() {
        return Err(GeoError::EmptySampleSet(
            "no states kept after burn-in and thinning".into(),
        ));
    }
    Ok(set)
}

fn run_chain<F>(
    domain: &DomainBox,
    cfg: &MhConfig,
    thin: usize,
    target: &F,
    rng: &mut ChaCha8Rng,
) -> Result<ChainOutput>
where
    F: Fn(&[f64]) -> Option<(f64, f64)> + Sync,
{
    // Start from a uniform draw with positive weight.
    let mut x = Vec::new();
    let mut current = None;
    for _ in 0..10_000 {
        x = domain.sample_uniform(rng);
        if let Some((w, e)) = target(&x).filter(|(w, _)| *w > 0.0 && w.is_finite()) {
            current = Some((w, e));
            break;
        }
    }
    let Some((mut w, mut extra)) = current else {
        return Err(GeoError::EmptySampleSet(
            "target weight vanishes on every initial draw".into(),
        ));
    };
    let mut out = ChainOutput {
        points: Vec::new(),
        weights: Vec::new(),
        extra: Vec::new(),
        proposed: 0,
        accepted: 0,
    };
    for step in 0..cfg.steps_per_chain {
        let y: Vec<f64> = x
            .iter()
            .map(|v| {
                v + cfg.proposal_sigma
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            })
            .collect();
        let u: f64 = rng.gen();
        out.proposed += 1;
        if domain.contains(&y) {
            if let Some((wy, ey)) = target(&y).filter(|(w, _)| *w > 0.0 && w.is_finite()) {
                if u * w < wy {
                    x = y;
                    w = wy;
                    extra = ey;
                    out.accepted += 1;
                }
            }
        }
        if step >= cfg.burn_in && (step - cfg.burn_in + 1).is_multiple_of(thin) {
            out.points.push(x.clone());
            out.weights.push(w);
            out.extra.push(extra);
        }
    }
    Ok(out)
}

/// Metropolis-Hastings with target `ψ(R(x); α)`.
pub fn mh_sample(im: &dyn Immersion, domain: &DomainBox, cfg: &MhConfig) -> Result<SampleSet> {
    if domain.dim() != im.chart_dim() {
        return Err(GeoError::Shape("domain and chart dimensions differ".into()));
    }
    mh_sample_target(domain, cfg, |x| {
        let r = curvature_at(im, x).ok()?.scalar;
        Some((psi_with(r, cfg.alpha, cfg.negative_curvature), r))
    })
}

/// Potential scale reduction per coordinate; 1 for fewer than two chains or draws.
pub fn gelman_rubin(chains: &[Vec<Vec<f64>>]) -> Vec<f64> {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let d = chains.first().and_then(|c| c.first()).map_or(0, Vec::len);
    if m < 2 || n < 2 {
        return vec![1.0; d];
    }
    (0..d)
        .map(|j| {
            let means: Vec<f64> = chains
                .iter()
                .map(|c| c[..n].iter().map(|x| x[j]).sum::<f64>() / n as f64)
                .collect();
            let grand = means.iter().sum::<f64>() / m as f64;
            let b =
                n as f64 * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m - 1) as f64;
            let w = chains
                .iter()
                .zip(&means)
                .map(|(c, mu)| {
                    c[..n].iter().map(|x| (x[j] - mu).powi(2)).sum::<f64>() / (n - 1) as f64
                })
                .sum::<f64>()
                / m as f64;
            if w <= 0.0 {
                return 1.0;
            }
            let var = (n - 1) as f64 / n as f64 * w + b / n as f64;
            (var / w).sqrt()
        })
        .collect()
}

/// Bandwidth selection for [`kde_fit`].
#[derive(Clone, Debug, PartialEq)]
pub enum Bandwidth {
    /// `n^{-1/(d+4)}` times the per-dimension sample standard deviation.
    Scott,
    Fixed(Vec<f64>),
}

/// Gaussian product-kernel density, optionally truncated to a box and
/// renormalised there.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityEstimate {
    pub centers: Vec<Vec<f64>>,
    pub bandwidth: Vec<f64>,
    pub domain: Option<DomainBox>,
    /// Kernel mass inside the domain (1 without a domain).
    pub normalization: f64,
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

pub fn kde_fit(
    samples: &[Vec<f64>],
    rule: &Bandwidth,
    domain: Option<&DomainBox>,
) -> Result<DensityEstimate> {
    let n = samples.len();
    if n == 0 {
        return Err(GeoError::EmptySampleSet(
            "cannot fit a density to no samples".into(),
        ));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(GeoError::Shape("samples differ in dimension".into()));
    }
    let bandwidth = match rule {
        Bandwidth::Fixed(h) => {
            if h.len() != d || h.iter().any(|v| !(*v > 0.0)) {
                return Err(GeoError::InvalidArgument(
                    "bandwidth must be positive per dimension".into(),
                ));
            }
            h.clone()
        }
        Bandwidth::Scott => {
            let factor = (n as f64).powf(-1.0 / (d as f64 + 4.0));
            (0..d)
                .map(|j| {
                    let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n as f64;
                    let var = if n > 1 {
                        samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
                    } else {
                        0.0
                    };
                    // A single point, or all points equal along j, has no spread to scale.
                    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                    factor * sd
                })
                .collect()
        }
    };
    let normalization = match domain {
        None => 1.0,
        Some(b) => {
            let mass = samples
                .iter()
                .map(|c| {
                    (0..d)
                        .map(|j| {
                            normal_cdf((b.upper[j] - c[j]) / bandwidth[j])
                                - normal_cdf((b.lower[j] - c[j]) / bandwidth[j])
                        })
                        .product::<f64>()
                })
                .sum::<f64>()
                / n as f64;
            if !(mass > 0.0) {
                return Err(GeoError::EmptySampleSet(
                    "kernel mass inside the domain is zero".into(),
                ));
            }
            mass
        }
    };
    Ok(DensityEstimate {
        centers: samples.to_vec(),
        bandwidth,
        domain: domain.cloned(),
        normalization,
    })
}

pub fn kde_pdf(est: &DensityEstimate, x: &[f64]) -> f64 {
    if let Some(b) = &est.domain {
        if !b.contains(x) {
            return 0.0;
        }
    }
    let d = x.len();
    let norm: f64 = est
        .bandwidth
        .iter()
        .map(|h| h * (2.0 * std::f64::consts::PI).sqrt())
        .product();
    let sum: f64 = est
        .centers
        .iter()
        .map(|c| {
            let q: f64 = (0..d)
                .map(|j| ((x[j] - c[j]) / est.bandwidth[j]).powi(2))
                .sum();
            (-0.5 * q).exp()
        })
        .sum();
    sum / (est.centers.len() as f64 * norm * est.normalization)
}

/// Draw from the (domain-truncated) KDE: a random center plus Gaussian
/// jitter, redrawn whenever it lands outside the domain.
pub fn kde_draw<R: Rng + ?Sized>(
    est: &DensityEstimate,
    domain: &DomainBox,
    rng: &mut R,
) -> Result<Vec<f64>> {
    for _ in 0..100_000 {
        let c = est.centers.choose(rng).expect("estimate has centers");
        let x: Vec<f64> = c
            .iter()
            .zip(&est.bandwidth)
            .map(|(m, h)| Normal::new(*m, *h).expect("positive bandwidth").sample(rng))
            .collect();
        if domain.contains(&x) {
            return Ok(x);
        }
    }
    Err(GeoError::EmptySampleSet(
        "kernel density has almost no mass inside the domain".into(),
    ))
}

/// `⌊n/2⌋` uniform draws followed by `⌈n/2⌉` KDE draws. Without usable
/// centers every draw is uniform.
pub fn training_sampler<R: Rng + ?Sized>(
    domain: &DomainBox,
    est: Option<&DensityEstimate>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let usable = est.filter(|e| !e.centers.is_empty());
    if usable.is_none() {
        warn!("no curvature density available; drawing all {n} training points uniformly");
        return Ok((0..n).map(|_| domain.sample_uniform(rng)).collect());
    }
    let est = usable.unwrap();
    let n_uniform = n / 2;
    let mut out: Vec<Vec<f64>> = (0..n_uniform).map(|_| domain.sample_uniform(rng)).collect();
    for _ in n_uniform..n {
        out.push(kde_draw(est, domain, rng)?);
    }
    Ok(out)
}

/// Pearson chi-square statistic and p-value for uniformity of `points` over
/// a `bins^d` grid on `domain`.
pub fn chi_square_uniformity(points: &[Vec<f64>], domain: &DomainBox, bins: usize) -> (f64, f64) {
    let d = domain.dim();
    let cells = bins.pow(d as u32);
    let mut counts = vec![0usize; cells];
    for p in points {
        let mut idx = 0;
        for j in (0..d).rev() {
            let t = (p[j] - domain.lower[j]) / (domain.upper[j] - domain.lower[j]);
            let b = ((t * bins as f64) as usize).min(bins - 1);
            idx = idx * bins + b;
        }
        counts[idx] += 1;
    }
    let expected = points.len() as f64 / cells as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((cells - 1) as f64).expect("positive degrees of freedom");
    (stat, 1.0 - dist.cdf(stat))
}

/// Welch's t statistic and one-sided p-value for `mean(a) > mean(b)`.
pub fn welch_t_greater(a: &[f64], b: &[f64]) -> (f64, f64) {
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, s2)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).expect("valid t distribution");
    (t, 1.0 - dist.cdf(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Euclidean;

    #[test]
    fn burn_in_swallowing_the_chain_is_an_error() {
        let cfg = MhConfig {
            chains: 1,
            burn_in: 100,
            steps_per_chain: 100,
            ..Default::default()
        };
        let err =
            mh_sample(&Euclidean { dim: 2 }, &DomainBox::cube(2, -3.0, 3.0), &cfg).unwrap_err();
        assert!(matches!(err, GeoError::EmptySampleSet(_)));
    }

    #[test]
    fn gaussian_target_moments() {
        let domain = DomainBox::cube(2, -12.0, 12.0);
        let cfg = MhConfig {
            proposal_sigma: 1.5,
            steps_per_chain: 5500,
            seed: 11,
            ..Default::default()
        };
        // Mean (1, -0.5), covariance [[2, 0.6], [0.6, 1]].
        let (a, b, c) = (2.0, 0.6, 1.0);
        let det: f64 = a * c - b * b;
        let set = mh_sample_target(&domain, &cfg, |x| {
            let (u, v) = (x[0] - 1.0, x[1] + 0.5);
            let q = (c * u * u - 2.0 * b * u * v + a * v * v) / det;
            Some(((-0.5 * q).exp(), 0.0))
        })
        .unwrap();
        assert_eq!(set.len(), 8 * 5000);
        let n = set.len() as f64;
        let mx = set.points.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = set.points.iter().map(|p| p[1]).sum::<f64>() / n;
        let cxx = set.points.iter().map(|p| (p[0] - mx).powi(2)).sum::<f64>() / n;
        let cxy = set
            .points
            .iter()
            .map(|p| (p[0] - mx) * (p[1] - my))
            .sum::<f64>()
            / n;
        let cyy = set.points.iter().map(|p| (p[1] - my).powi(2)).sum::<f64>() / n;
        assert!(
            (mx - 1.0).abs() < 0.1 && (my + 0.5).abs() < 0.1,
            "mean {mx} {my}"
        );
        assert!(
            (cxx - a).abs() < 0.1 * a && (cyy - c).abs() < 0.1 * c,
            "var {cxx} {cyy}"
        );
        assert!((cxy - b).abs() < 0.1, "cov {cxy}");
        assert!(set.r_hat.iter().all(|r| *r < 1.05));
    }

    #[test]
    fn sampling_is_reproducible() {
        let cfg = MhConfig {
            steps_per_chain: 700,
            seed: 5,
            ..Default::default()
        };
        let d = DomainBox::cube(2, -3.0, 3.0);
        let a = mh_sample(&Euclidean { dim: 2 }, &d, &cfg).unwrap();
        let b = mh_sample(&Euclidean { dim: 2 }, &d, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.points.iter().all(|p| d.contains(p)));
    }

    #[test]
    fn keeping_sizes_the_set() {
        let cfg = MhConfig {
            thin: 3,
            seed: 1,
            ..Default::default()
        }
        .keeping(1001);
        let set = mh_sample(&Euclidean { dim: 2 }, &DomainBox::cube(2, -3.0, 3.0), &cfg).unwrap();
        assert_eq!(set.len(), 1001);
    }

    #[test]
    fn tiny_acceptance_is_reported() {
        let cfg = MhConfig {
            chains: 2,
            steps_per_chain: 2000,
            proposal_sigma: 1e4,
            ..Default::default()
        };
        let err =
            mh_sample(&Euclidean { dim: 2 }, &DomainBox::cube(2, -3.0, 3.0), &cfg).unwrap_err();
        assert!(matches!(err, GeoError::LowAcceptance { .. }));
    }

    #[test]
    fn kde_single_center_peaks_there() {
        let est = kde_fit(&[vec![0.5, -0.2]], &Bandwidth::Scott, None).unwrap();
        let at = kde_pdf(&est, &[0.5, -0.2]);
        for off in [[0.1, 0.0], [0.0, -0.1], [0.3, 0.3]] {
            assert!(kde_pdf(&est, &[0.5 + off[0], -0.2 + off[1]]) < at);
        }
    }

    #[test]
    fn kde_two_centers_symmetric() {
        let est = kde_fit(&[vec![-1.0, 0.0], vec![1.0, 0.0]], &Bandwidth::Scott, None).unwrap();
        for x in [0.1, 0.7, 2.3] {
            assert!((kde_pdf(&est, &[x, 0.4]) - kde_pdf(&est, &[-x, 0.4])).abs() < 1e-10);
        }
    }

    #[test]
    fn kde_recovers_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s: Vec<Vec<f64>> = (0..1000)
            .map(|_| vec![StandardNormal.sample(&mut rng)])
            .collect();
        let est = kde_fit(&s, &Bandwidth::Scott, None).unwrap();
        let truth = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((kde_pdf(&est, &[0.0]) - truth).abs() < 0.15 * truth);
    }

    #[test]
    fn truncated_kde_integrates_to_one() {
        let domain = DomainBox::cube(2, -3.0, 3.0);
        let centers = vec![
            vec![2.8, 2.9],
            vec![-1.0, 0.5],
            vec![0.0, -2.95],
            vec![1.0, 1.0],
        ];
        let est = kde_fit(&centers, &Bandwidth::Fixed(vec![0.5, 0.4]), Some(&domain)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mean: f64 = (0..n)
            .map(|_| kde_pdf(&est, &domain.sample_uniform(&mut rng)))
            .sum::<f64>()
            / n as f64;
        assert!((mean * domain.volume() - 1.0).abs() < 0.02);
    }

    #[test]
    fn training_split_and_fallback() {
        let domain = DomainBox::cube(2, -3.0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let est = kde_fit(
            &[vec![2.9, 2.9]],
            &Bandwidth::Fixed(vec![0.05, 0.05]),
            Some(&domain),
        )
        .unwrap();
        let pts = training_sampler(&domain, Some(&est), 2001, &mut rng).unwrap();
        assert_eq!(pts.len(), 2001);
        assert!(pts.iter().all(|p| domain.contains(p)));
        // The KDE half sits next to its only center.
        let near = pts[1000..]
            .iter()
            .filter(|p| p[0] > 2.5 && p[1] > 2.5)
            .count();
        assert_eq!(near, 1001);
        let empty = DensityEstimate {
            centers: vec![],
            bandwidth: vec![1.0, 1.0],
            domain: None,
            normalization: 1.0,
        };
        let pts = training_sampler(&domain, Some(&empty), 10, &mut rng).unwrap();
        assert_eq!(pts.len(), 10);
    }

    #[test]
    fn statistics_helpers() {
        let domain = DomainBox::cube(2, 0.0, 1.0);
        let grid = DomainBox::cube(2, 0.05, 0.95).grid(4);
        let (stat, p) = chi_square_uniformity(&grid, &domain, 4);
        assert_eq!(stat, 0.0);
        assert!(p > 0.99);
        let (t, p) = welch_t_greater(&[2.0, 2.1, 1.9, 2.05], &[1.0, 1.1, 0.9, 0.95]);
        assert!(t > 10.0 && p < 1e-4);
    }
}
