//! Length-minimising curves parameterised by a small network.
//!
//! `γ(λ) = (1 − λ) p + λ q + λ(1 − λ) c(λ)` with `c` a `1 → h → h → d` tanh
//! network, so the endpoints hold for every parameter value. Parameters are
//! trained with Adam to minimise the trapezoid-rule length.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{curve_length, energies_of, TangentCurve, TangentSamples};
use crate::diff::{loss_parameter_gradient, Jet, JetBatch, JetLoss};
use crate::error::{GeoError, Result};
use crate::manifold::{metric_jet, quadratic, Immersion};
use crate::nn::{Activation, Adam, MlpNetwork};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MllmConfig {
    pub ensemble: usize,
    pub lr: f64,
    pub steps: usize,
    pub hidden: usize,
    /// Quadrature points used during training.
    pub train_points: usize,
    /// Quadrature points for the reported length and energy profile.
    pub eval_points: usize,
    pub seed: u64,
}

impl Default for MllmConfig {
    fn default() -> Self {
        MllmConfig {
            ensemble: 30,
            lr: 3e-4,
            steps: 2000,
            hidden: 32,
            train_points: 201,
            eval_points: 1001,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveNetwork {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub core: MlpNetwork,
    /// Grid size used when the curve is sampled as a [`TangentCurve`].
    pub grid: usize,
}

impl CurveNetwork {
    pub fn random(p: &[f64], q: &[f64], hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let core = MlpNetwork::random(
            &[1, hidden, hidden, p.len()],
            Activation::Tanh,
            Activation::Identity,
            rng,
        );
        CurveNetwork {
            p: p.to_vec(),
            q: q.to_vec(),
            core,
            grid: 1001,
        }
    }

    /// Position and velocity at `lambda`.
    pub fn evaluate(&self, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let c = self.core.forward_jets(&[Jet::variable(lambda, 0, 1, 1)]);
        let e = lambda * (1.0 - lambda);
        let de = 1.0 - 2.0 * lambda;
        let mut x = Vec::with_capacity(self.p.len());
        let mut v = Vec::with_capacity(self.p.len());
        for (i, ci) in c.iter().enumerate() {
            x.push((1.0 - lambda) * self.p[i] + lambda * self.q[i] + e * ci.value());
            v.push(self.q[i] - self.p[i] + de * ci.value() + e * ci.d1(0));
        }
        // Pin the endpoints bit-exactly; λ(1−λ)c vanishes there in exact arithmetic.
        if lambda == 0.0 {
            x = self.p.clone();
        } else if lambda == 1.0 {
            x = self.q.clone();
        }
        (x, v)
    }

    pub fn samples(&self, n: usize) -> TangentSamples {
        let lambdas: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        let (points, velocities) = lambdas.iter().map(|&l| self.evaluate(l)).unzip();
        TangentSamples {
            lambdas,
            points,
            velocities,
        }
    }
}

impl TangentCurve for CurveNetwork {
    fn tangent_samples(&self, _: &dyn Immersion) -> Result<TangentSamples> {
        Ok(self.samples(self.grid))
    }
}

struct LengthLoss<'a> {
    im: &'a dyn Immersion,
    p: &'a [f64],
    q: &'a [f64],
    lambdas: Vec<f64>,
    weights: Vec<f64>,
}

impl JetLoss for LengthLoss<'_> {
    fn sample_loss(&self, sample: usize, out: &[f64], adj: &mut [f64]) -> Result<f64> {
        let d = self.p.len();
        let l = self.lambdas[sample];
        let w = self.weights[sample];
        let e = l * (1.0 - l);
        let de = 1.0 - 2.0 * l;
        let x: Vec<f64> = (0..d)
            .map(|i| (1.0 - l) * self.p[i] + l * self.q[i] + e * out[2 * i])
            .collect();
        let v: Vec<f64> = (0..d)
            .map(|i| self.q[i] - self.p[i] + de * out[2 * i] + e * out[2 * i + 1])
            .collect();
        let mj = metric_jet(self.im, &x, 1)?;
        let s2 = quadratic(mj.g(), &v, &v);
        let s = s2.max(0.0).sqrt();
        if s < 1e-12 {
            return Ok(w * s);
        }
        for m in 0..d {
            let dv: f64 = w * (0..d).map(|j| mj.g()[(m, j)] * v[j]).sum::<f64>() / s;
            let dx = w * quadratic(&mj.dg[m], &v, &v) / (2.0 * s);
            adj[2 * m] = e * dx + de * dv;
            adj[2 * m + 1] = e * dv;
        }
        Ok(w * s)
    }
}

fn trapezoid_weights(n: usize) -> Vec<f64> {
    let h = 1.0 / (n - 1) as f64;
    (0..n)
        .map(|k| if k == 0 || k == n - 1 { 0.5 * h } else { h })
        .collect()
}

#[derive(Clone, Debug)]
pub struct MemberOutcome {
    pub seed: u64,
    /// Final length on the evaluation grid, `None` when training failed.
    pub length: Option<f64>,
    pub energies: Option<Vec<f64>>,
    pub error: Option<GeoError>,
    pub final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct MllmResult {
    pub best: CurveNetwork,
    pub best_index: usize,
    pub length: f64,
    pub members: Vec<MemberOutcome>,
}

fn train_member(
    im: &dyn Immersion,
    p: &[f64],
    q: &[f64],
    cfg: &MllmConfig,
    seed: u64,
) -> (Option<CurveNetwork>, MemberOutcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curve = CurveNetwork::random(p, q, cfg.hidden, &mut rng);
    curve.grid = cfg.eval_points;
    let n = cfg.train_points.max(2);
    let lambdas: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
    let batch = JetBatch::seeded(&lambdas.iter().map(|&l| vec![l]).collect::<Vec<_>>(), 1);
    let loss = LengthLoss {
        im,
        p,
        q,
        weights: trapezoid_weights(n),
        lambdas,
    };
    let mut params = curve.core.params();
    let mut adam = Adam::new(params.len(), cfg.lr);
    let mut final_loss = f64::NAN;
    let fail = |error: GeoError, final_loss: f64| {
        (
            None,
            MemberOutcome {
                seed,
                length: None,
                energies: None,
                error: Some(error),
                final_loss,
            },
        )
    };
    for _ in 0..cfg.steps {
        match loss_parameter_gradient(&curve.core, &batch, &loss) {
            Ok(g) => {
                final_loss = g.loss_value;
                adam.step(&mut params, &g.gradient);
                if params.iter().any(|v| !v.is_finite()) {
                    return fail(GeoError::NonFinite, final_loss);
                }
                curve
                    .core
                    .set_params(&params)
                    .expect("parameter count is fixed");
            }
            Err(e) => return fail(e, final_loss),
        }
    }
    let t = curve.samples(cfg.eval_points);
    let energies = match energies_of(im, &t) {
        Ok(e) => e,
        Err(e) => return fail(e, final_loss),
    };
    let length = match curve_length(im, &curve) {
        Ok(l) if l.is_finite() => l,
        Ok(_) => return fail(GeoError::NonFinite, final_loss),
        Err(e) => return fail(e, final_loss),
    };
    (
        Some(curve),
        MemberOutcome {
            seed,
            length: Some(length),
            energies: Some(energies),
            error: None,
            final_loss,
        },
    )
}

/// Train an ensemble of curve networks between `p` and `q` and keep the
/// shortest. Members run concurrently; member `k` is seeded with `seed + k`.
pub fn train_mllm(
    im: &dyn Immersion,
    p: &[f64],
    q: &[f64],
    cfg: &MllmConfig,
) -> Result<MllmResult> {
    let d = im.chart_dim();
    if p.len() != d || q.len() != d {
        return Err(GeoError::Shape(format!(
            "endpoints must have {d} coordinates"
        )));
    }
    if cfg.ensemble == 0 {
        return Err(GeoError::InvalidArgument(
            "ensemble must have at least one member".into(),
        ));
    }
    let runs: Vec<(Option<CurveNetwork>, MemberOutcome)> = (0..cfg.ensemble)
        .into_par_iter()
        .map(|k| train_member(im, p, q, cfg, cfg.seed.wrapping_add(k as u64)))
        .collect();
    let best_index = runs
        .iter()
        .enumerate()
        .filter_map(|(i, (_, m))| m.length.map(|l| (i, l)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    let Some(best_index) = best_index else {
        let err = runs
            .iter()
            .find_map(|(_, m)| m.error.clone())
            .unwrap_or(GeoError::NonFinite);
        return Err(err);
    };
    let length = runs[best_index].1.length.unwrap();
    let mut best = None;
    let mut members = Vec::with_capacity(runs.len());
    for (i, (curve, m)) in runs.into_iter().enumerate() {
        if i == best_index {
            best = curve;
        }
        members.push(m);
    }
    Ok(MllmResult {
        best: best.unwrap(),
        best_index,
        length,
        members,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{Euclidean, Sphere};

    #[test]
    fn endpoints_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = CurveNetwork::random(&[0.3, -1.0], &[2.0, 0.7], 8, &mut rng);
        assert_eq!(c.evaluate(0.0).0, vec![0.3, -1.0]);
        assert_eq!(c.evaluate(1.0).0, vec![2.0, 0.7]);
    }

    #[test]
    fn velocity_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = CurveNetwork::random(&[0.0, 0.0], &[1.0, 1.0], 8, &mut rng);
        let h = 1e-6;
        let (_, v) = c.evaluate(0.4);
        let (a, _) = c.evaluate(0.4 + h);
        let (b, _) = c.evaluate(0.4 - h);
        for i in 0..2 {
            assert!((v[i] - (a[i] - b[i]) / (2.0 * h)).abs() < 1e-7);
        }
    }

    #[test]
    fn length_gradient_matches_finite_differences() {
        let s = Sphere { radius: 1.0 };
        let (p, q) = ([1.0, -0.7], [1.9, 0.6]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let curve = CurveNetwork::random(&p, &q, 4, &mut rng);
        let n = 11;
        let lambdas: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        let batch = JetBatch::seeded(&lambdas.iter().map(|&l| vec![l]).collect::<Vec<_>>(), 1);
        let loss = LengthLoss {
            im: &s,
            p: &p,
            q: &q,
            weights: trapezoid_weights(n),
            lambdas,
        };
        let exact = loss_parameter_gradient(&curve.core, &batch, &loss)
            .unwrap()
            .gradient;
        let p0 = curve.core.params();
        let mut net = curve.core.clone();
        for i in 0..p0.len() {
            let mut pp = p0.clone();
            pp[i] += 1e-6;
            net.set_params(&pp).unwrap();
            let up = loss_parameter_gradient(&net, &batch, &loss)
                .unwrap()
                .loss_value;
            pp[i] -= 2e-6;
            net.set_params(&pp).unwrap();
            let down = loss_parameter_gradient(&net, &batch, &loss)
                .unwrap()
                .loss_value;
            let fd = (up - down) / 2e-6;
            assert!(
                (exact[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "param {i}: {} vs {fd}",
                exact[i]
            );
        }
    }

    #[test]
    fn flat_space_converges_to_the_segment() {
        let e = Euclidean { dim: 2 };
        let cfg = MllmConfig {
            ensemble: 2,
            steps: 2000,
            ..Default::default()
        };
        let r = train_mllm(&e, &[-1.0, -1.0], &[2.0, 3.0], &cfg).unwrap();
        assert!((r.length - 5.0).abs() < 1e-3, "{}", r.length);
        // Only trapezoid error can take the length below the straight segment.
        assert!(r.length >= 5.0 - 1e-5, "{}", r.length);
    }
}
