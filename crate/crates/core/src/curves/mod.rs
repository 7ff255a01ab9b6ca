//! Curve lengths and energy profiles, geodesic distance by shooting, and the
//! two baselines a geodesic is compared against: straight chart interpolation
//! and a network-parameterised length-minimising curve.

mod mllm;

pub use mllm::{train_mllm, CurveNetwork, MemberOutcome, MllmConfig, MllmResult};

use rayon::prelude::*;

use crate::error::{GeoError, Result};
use crate::geodesic::{
    log_map, shooting_seeds, GeodesicPath, IntegratorConfig, ShootingConfig, ShootingResult,
};
use crate::manifold::{induced_metric, quadratic, Immersion};

/// Positions and velocities of a curve on a uniform `λ` grid over `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentSamples {
    pub lambdas: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

/// Anything that can report its position and velocity along `[0, 1]`.
pub trait TangentCurve {
    fn tangent_samples(&self, im: &dyn Immersion) -> Result<TangentSamples>;
}

/// Chart points at a uniform `λ` grid; velocities by finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteCurve {
    samples: Vec<Vec<f64>>,
}

impl DiscreteCurve {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(GeoError::InvalidArgument(
                "a curve needs at least two samples".into(),
            ));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(GeoError::Shape(
                "curve samples have differing dimensions".into(),
            ));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeoError::NonFinite);
        }
        Ok(DiscreteCurve { samples })
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn reversed(&self) -> Self {
        DiscreteCurve {
            samples: self.samples.iter().rev().cloned().collect(),
        }
    }

    /// Central differences inside, second-order one-sided differences at the
    /// ends (first-order when only two samples exist).
    pub fn velocities(&self) -> Vec<Vec<f64>> {
        let n = self.samples.len();
        let h = 1.0 / (n - 1) as f64;
        let s = &self.samples;
        let d = s[0].len();
        (0..n)
            .map(|k| {
                (0..d)
                    .map(|i| {
                        if n == 2 {
                            (s[1][i] - s[0][i]) / h
                        } else if k == 0 {
                            (-3.0 * s[0][i] + 4.0 * s[1][i] - s[2][i]) / (2.0 * h)
                        } else if k == n - 1 {
                            (3.0 * s[n - 1][i] - 4.0 * s[n - 2][i] + s[n - 3][i]) / (2.0 * h)
                        } else {
                            (s[k + 1][i] - s[k - 1][i]) / (2.0 * h)
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

fn uniform_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
}

impl TangentCurve for DiscreteCurve {
    fn tangent_samples(&self, _: &dyn Immersion) -> Result<TangentSamples> {
        Ok(TangentSamples {
            lambdas: uniform_grid(self.len()),
            points: self.samples.clone(),
            velocities: self.velocities(),
        })
    }
}

impl TangentCurve for GeodesicPath {
    /// Velocities are `g^-1 p`, exact for the integrated state.
    fn tangent_samples(&self, im: &dyn Immersion) -> Result<TangentSamples> {
        let velocities = self
            .states
            .iter()
            .zip(&self.lambdas)
            .map(|(s, &l)| {
                induced_metric(im, &s.q)
                    .map(|m| m.raise(&s.p))
                    .map_err(|e| e.at_lambda(l))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TangentSamples {
            lambdas: self.lambdas.clone(),
            points: self.positions(),
            velocities,
        })
    }
}

/// Straight chart line; velocities are exact.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearCurve {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub n: usize,
}

impl TangentCurve for LinearCurve {
    fn tangent_samples(&self, _: &dyn Immersion) -> Result<TangentSamples> {
        let c = linear_interpolation(&self.p, &self.q, self.n)?;
        let v: Vec<f64> = self.q.iter().zip(&self.p).map(|(a, b)| a - b).collect();
        Ok(TangentSamples {
            lambdas: uniform_grid(self.n),
            points: c.samples,
            velocities: vec![v; self.n],
        })
    }
}

/// `⟨γ̇, γ̇⟩_g` at each sample.
pub fn energy_profile(im: &dyn Immersion, c: &dyn TangentCurve) -> Result<Vec<f64>> {
    let t = c.tangent_samples(im)?;
    energies_of(im, &t)
}

fn energies_of(im: &dyn Immersion, t: &TangentSamples) -> Result<Vec<f64>> {
    t.points
        .iter()
        .zip(&t.velocities)
        .zip(&t.lambdas)
        .map(|((x, v), &l)| {
            induced_metric(im, x)
                .map(|m| quadratic(&m.g, v, v))
                .map_err(|e| e.at_lambda(l))
        })
        .collect()
}

/// Composite trapezoid rule on a uniform grid over `[0, 1]`.
pub fn trapezoid(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let h = 1.0 / (n - 1) as f64;
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// `∫ ⟨γ̇, γ̇⟩^{1/2} dλ` by the trapezoid rule.
pub fn curve_length(im: &dyn Immersion, c: &dyn TangentCurve) -> Result<f64> {
    let e = energy_profile(im, c)?;
    Ok(trapezoid(
        &e.iter().map(|v| v.max(0.0).sqrt()).collect::<Vec<_>>(),
    ))
}

/// `∫ ⟨γ̇, γ̇⟩ dλ` by the trapezoid rule.
pub fn curve_action(im: &dyn Immersion, c: &dyn TangentCurve) -> Result<f64> {
    Ok(trapezoid(&energy_profile(im, c)?))
}

/// `n` equally spaced chart points from `p` to `q`.
pub fn linear_interpolation(p: &[f64], q: &[f64], n: usize) -> Result<DiscreteCurve> {
    if p.len() != q.len() {
        return Err(GeoError::Shape("endpoints differ in dimension".into()));
    }
    if n < 2 {
        return Err(GeoError::InvalidArgument(
            "interpolation needs n >= 2".into(),
        ));
    }
    let samples = (0..n)
        .map(|k| {
            if k == 0 {
                return p.to_vec();
            }
            if k == n - 1 {
                return q.to_vec();
            }
            let t = k as f64 / (n - 1) as f64;
            p.iter()
                .zip(q)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect()
        })
        .collect();
    DiscreteCurve::new(samples)
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// `(max − min) / mean` of an energy profile.
pub fn relative_variation(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    (hi - lo) / mean.abs().max(1e-300)
}

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: Vec<f64>,
    pub result: Result<ShootingResult>,
    /// Length of the converged geodesic.
    pub length: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct DistanceReport {
    /// Smallest length among converged seeds.
    pub distance: f64,
    /// Index into `seeds` of the shortest geodesic.
    pub best: usize,
    pub seeds: Vec<SeedOutcome>,
}

impl DistanceReport {
    pub fn best_result(&self) -> &ShootingResult {
        self.seeds[self.best]
            .result
            .as_ref()
            .expect("best seed converged")
    }

    pub fn failures(&self) -> usize {
        self.seeds.iter().filter(|s| s.length.is_none()).count()
    }
}

/// Length of the shortest geodesic among those found from the configured
/// seeds. This is an infimum over the found set only.
pub fn geodesic_distance(
    im: &dyn Immersion,
    p: &[f64],
    q: &[f64],
    icfg: &IntegratorConfig,
    scfg: &ShootingConfig,
) -> Result<DistanceReport> {
    let seeds = shooting_seeds(p, q, scfg);
    let outcomes: Vec<SeedOutcome> = seeds
        .into_par_iter()
        .map(|seed| {
            let result =
                log_map(im, p, q, icfg, scfg, Some(&seed)).and_then(ShootingResult::into_converged);
            let length = match &result {
                Ok(r) => curve_length(im, &r.path).ok(),
                Err(_) => None,
            };
            SeedOutcome {
                seed,
                result,
                length,
            }
        })
        .collect();
    let best = outcomes
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.length.map(|l| (i, l)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    match best {
        Some((best, distance)) => Ok(DistanceReport {
            distance,
            best,
            seeds: outcomes,
        }),
        None => Err(GeoError::NoGeodesic {
            seeds: outcomes.len(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::exp_map;
    use crate::manifold::{Euclidean, Sphere};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn straight_line_length() {
        let e = Euclidean { dim: 2 };
        let c = linear_interpolation(&[0.0, 0.0], &[3.0, 4.0], 11).unwrap();
        assert!((curve_length(&e, &c).unwrap() - 5.0).abs() < 1e-12);
        assert!(energy_profile(&e, &c)
            .unwrap()
            .iter()
            .all(|v| (v - 25.0).abs() < 1e-10));
    }

    #[test]
    fn interpolation_examples() {
        let c = linear_interpolation(&[1.0, -1.0], &[3.0, 5.0], 5).unwrap();
        assert_eq!(c.samples()[0], vec![1.0, -1.0]);
        assert_eq!(c.samples()[4], vec![3.0, 5.0]);
        assert_eq!(c.samples()[2], vec![2.0, 2.0]);
        let c = linear_interpolation(&[1.0], &[2.0], 2).unwrap();
        assert_eq!(c.samples(), &[vec![1.0], vec![2.0]]);
    }

    #[test]
    fn equator_quarter_arc() {
        let s = Sphere { radius: 1.0 };
        let c = linear_interpolation(&[FRAC_PI_2, 0.0], &[FRAC_PI_2, FRAC_PI_2], 1001).unwrap();
        assert!((curve_length(&s, &c).unwrap() - FRAC_PI_2).abs() < 1e-5);
    }

    #[test]
    fn reversal_preserves_length() {
        let s = Sphere { radius: 1.0 };
        let samples = (0..201)
            .map(|k| {
                let t = k as f64 / 200.0;
                vec![1.0 + 0.3 * t * t, 2.0 * t - 0.5 * t * t * t]
            })
            .collect();
        let c = DiscreteCurve::new(samples).unwrap();
        let a = curve_length(&s, &c).unwrap();
        let b = curve_length(&s, &c.reversed()).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn geodesic_path_energy_is_twice_hamiltonian() {
        let s = Sphere { radius: 1.0 };
        let path = exp_map(&s, &[1.0, 0.0], &[0.3, 0.5], &IntegratorConfig::default()).unwrap();
        let e = energy_profile(&s, &path).unwrap();
        for (a, h) in e.iter().zip(&path.energies) {
            assert!((a - 2.0 * h).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_examples() {
        let e = Euclidean { dim: 2 };
        let icfg = IntegratorConfig::default();
        let r = geodesic_distance(
            &e,
            &[0.0, 0.0],
            &[3.0, 4.0],
            &icfg,
            &ShootingConfig::default(),
        )
        .unwrap();
        assert!((r.distance - 5.0).abs() < 1e-9);
        let s = Sphere { radius: 1.0 };
        let r = geodesic_distance(
            &s,
            &[FRAC_PI_2, 0.0],
            &[FRAC_PI_2, 1.0],
            &icfg,
            &ShootingConfig::default(),
        )
        .unwrap();
        assert!((r.distance - 1.0).abs() < 1e-4);
    }

    #[test]
    fn variance_helpers() {
        assert_eq!(variance(&[2.0, 2.0, 2.0]), 0.0);
        assert_eq!(variance(&[1.0, 3.0]), 1.0);
        assert!((relative_variation(&[1.0, 1.1, 0.9]) - 0.2).abs() < 1e-12);
    }
}
