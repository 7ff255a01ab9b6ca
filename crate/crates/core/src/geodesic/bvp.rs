//! Logarithmic map by Newton shooting on `r(v) = exp_p(v) − q`.
//!
//! Converged solutions are geodesics joining the endpoints; they are locally
//! length-minimising but not necessarily the shortest. Several seeds may find
//! different branches, and all of them are returned.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ivp::{exp_map, GeodesicPath, IntegratorConfig};
use crate::error::{GeoError, Result};
use crate::manifold::Immersion;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShootingConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// Finite-difference step for the Jacobian, scaled by `max(|v|, 1)`.
    pub fd_step: f64,
    pub max_halvings: usize,
    /// Number of Newton starts for multi-seed solves.
    pub seeds: usize,
    /// Seed perturbation radius as a fraction of `|q − p|`.
    pub seed_spread: f64,
    pub rng_seed: u64,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        ShootingConfig {
            tol: 1e-8,
            max_iters: 50,
            fd_step: 1e-5,
            max_halvings: 8,
            seeds: 1,
            seed_spread: 0.2,
            rng_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShootingResult {
    pub v: Vec<f64>,
    pub path: GeodesicPath,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ShootingResult {
    /// The result itself when converged, otherwise a non-convergence error.
    pub fn into_converged(self) -> Result<ShootingResult> {
        if self.converged {
            Ok(self)
        } else {
            Err(GeoError::NonConvergence {
                iterations: self.iterations,
                best_residual: self.residual_norm,
            })
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn shoot(
    im: &dyn Immersion,
    p: &[f64],
    q: &[f64],
    v: &[f64],
    cfg: &IntegratorConfig,
) -> Result<(Vec<f64>, GeodesicPath)> {
    let path = exp_map(im, p, v, cfg).map_err(|e| GeoError::ResidualEvaluation(Box::new(e)))?;
    let r = path.endpoint().iter().zip(q).map(|(a, b)| a - b).collect();
    Ok((r, path))
}

/// `exp_p(v) − q` in chart coordinates.
pub fn shoot_residual(
    im: &dyn Immersion,
    p: &[f64],
    q: &[f64],
    v: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    Ok(shoot(im, p, q, v, cfg)?.0)
}

/// Newton shooting from the seed `v0` (default `q − p`).
///
/// Running out of iterations, or stalling after all step halvings, returns a
/// result with `converged == false` carrying the best iterate.
pub fn log_map(
    im: &dyn Immersion,
    p: &[f64],
    q: &[f64],
    icfg: &IntegratorConfig,
    scfg: &ShootingConfig,
    v0: Option<&[f64]>,
) -> Result<ShootingResult> {
    let d = im.chart_dim();
    if p.len() != d || q.len() != d {
        return Err(GeoError::Shape(format!(
            "endpoints must have {d} coordinates"
        )));
    }
    if p == q {
        let zero = vec![0.0; d];
        let path = exp_map(im, p, &zero, icfg)?;
        return Ok(ShootingResult {
            v: zero,
            path,
            residual_norm: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let mut v: Vec<f64> = match v0 {
        Some(s) if s.len() == d => s.to_vec(),
        Some(_) => return Err(GeoError::Shape("seed has the wrong dimension".into())),
        None => q.iter().zip(p).map(|(a, b)| a - b).collect(),
    };
    let (mut r, mut path) = shoot(im, p, q, &v, icfg)?;
    let mut rn = norm(&r);
    let mut iterations = 0;
    while rn > scfg.tol && iterations < scfg.max_iters {
        let jac = shooting_jacobian(im, p, q, &v, icfg, scfg.fd_step)?;
        let step = solve(jac, &r)?;
        iterations += 1;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=scfg.max_halvings {
            let trial: Vec<f64> = v.iter().zip(&step).map(|(a, b)| a - t * b).collect();
            if let Ok((tr, tp)) = shoot(im, p, q, &trial, icfg) {
                let tn = norm(&tr);
                if tn < rn {
                    accepted = Some((trial, tr, tp, tn));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((nv, nr, np, nn)) => {
                v = nv;
                r = nr;
                path = np;
                rn = nn;
            }
            None => break,
        }
    }
    Ok(ShootingResult {
        v,
        path,
        residual_norm: rn,
        iterations,
        converged: rn <= scfg.tol,
    })
}

/// Central-difference Jacobian `∂r/∂v`.
fn shooting_jacobian(
    im: &dyn Immersion,
    p: &[f64],
    q: &[f64],
    v: &[f64],
    cfg: &IntegratorConfig,
    fd_step: f64,
) -> Result<DMatrix<f64>> {
    let d = v.len();
    let h = fd_step * norm(v).max(1.0);
    let cols: Vec<Result<Vec<f64>>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut up = v.to_vec();
            up[j] += h;
            let mut down = v.to_vec();
            down[j] -= h;
            let a = shoot_residual(im, p, q, &up, cfg)?;
            let b = shoot_residual(im, p, q, &down, cfg)?;
            Ok(a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)).collect())
        })
        .collect();
    let mut jac = DMatrix::zeros(d, d);
    for (j, col) in cols.into_iter().enumerate() {
        for (i, val) in col?.into_iter().enumerate() {
            jac[(i, j)] = val;
        }
    }
    Ok(jac)
}

fn solve(jac: DMatrix<f64>, r: &[f64]) -> Result<Vec<f64>> {
    let svd = jac.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin / smax < 1e-12 {
        return Err(GeoError::SingularJacobian);
    }
    let x = jac
        .lu()
        .solve(&DVector::from_column_slice(r))
        .ok_or(GeoError::SingularJacobian)?;
    Ok(x.iter().copied().collect())
}

/// Start points for multi-seed shooting: `q − p`, then perturbations of it by
/// `seed_spread·|q − p|` in random directions.
pub fn shooting_seeds(p: &[f64], q: &[f64], cfg: &ShootingConfig) -> Vec<Vec<f64>> {
    let base: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
    let radius = cfg.seed_spread * norm(&base);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut seeds = vec![base.clone()];
    for _ in 1..cfg.seeds.max(1) {
        let dir: Vec<f64> = (0..base.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let n = norm(&dir).max(f64::MIN_POSITIVE);
        seeds.push(
            base.iter()
                .zip(&dir)
                .map(|(b, u)| b + radius * u / n)
                .collect(),
        );
    }
    seeds
}

/// Run `log_map` from every seed concurrently, in seed order.
pub fn log_map_multi(
    im: &dyn Immersion,
    p: &[f64],
    q: &[f64],
    icfg: &IntegratorConfig,
    scfg: &ShootingConfig,
) -> Vec<Result<ShootingResult>> {
    shooting_seeds(p, q, scfg)
        .par_iter()
        .map(|s| log_map(im, p, q, icfg, scfg, Some(s)))
        .collect()
}
