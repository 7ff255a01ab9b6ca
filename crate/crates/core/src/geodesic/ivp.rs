//! Hamiltonian geodesic flow and Tao's explicit symplectic integrator for the
//! nonseparable Hamiltonian `H(q, p) = ½ g^ij(q) p_i p_j`.
//!
//! The phase space is doubled to `(q, p, x, y)` with
//! `H̄ = H(q, y) + H(x, p) + ω ½(|q − x|² + |p − y|²)`; each of the three
//! pieces has an exact flow, and a symmetric splitting of them gives a
//! second-order map that triple-jump composition lifts to higher order.

use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::manifold::{induced_metric, metric_jet, quadratic, Immersion, MetricJet};

#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    /// Covariant momenta.
    pub p: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedPhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl ExtendedPhasePoint {
    /// Doubled state with `x = q`, `y = p`.
    pub fn new(pp: &PhasePoint) -> Self {
        ExtendedPhasePoint {
            q: pp.q.clone(),
            p: pp.p.clone(),
            x: pp.q.clone(),
            y: pp.p.clone(),
        }
    }

    pub fn phase_point(&self) -> PhasePoint {
        PhasePoint {
            q: self.q.clone(),
            p: self.p.clone(),
        }
    }

    /// `max(|q − x|∞, |p − y|∞)`.
    pub fn copy_gap(&self) -> f64 {
        let a = self.q.iter().zip(&self.x).map(|(a, b)| (a - b).abs());
        let b = self.p.iter().zip(&self.y).map(|(a, b)| (a - b).abs());
        a.chain(b).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.q
            .iter()
            .chain(&self.p)
            .chain(&self.x)
            .chain(&self.y)
            .all(|v| v.is_finite())
    }

    /// Same positions, momenta negated.
    pub fn reversed(&self) -> Self {
        ExtendedPhasePoint {
            q: self.q.clone(),
            p: self.p.iter().map(|v| -v).collect(),
            x: self.x.clone(),
            y: self.y.iter().map(|v| -v).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Requested step size; the unit interval is split into `ceil(1/delta)` equal steps.
    pub delta: f64,
    /// Binding strength between the two copies.
    pub omega: f64,
    /// Even composition order.
    pub order: usize,
    /// Relative energy drift that aborts integration.
    pub drift_error: f64,
    /// Relative energy drift that logs a warning.
    pub drift_warn: f64,
    /// Copy gap that logs a warning.
    pub coherence_warn: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            delta: 1e-3,
            omega: 1e-2,
            order: 4,
            drift_error: 1e-4,
            drift_warn: 1e-6,
            coherence_warn: 1e-6,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(GeoError::InvalidArgument(format!(
                "delta must lie in (0, 1], got {}",
                self.delta
            )));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(GeoError::InvalidArgument(format!(
                "omega must be positive, got {}",
                self.omega
            )));
        }
        check_order(self.order)
    }

    pub fn steps(&self) -> usize {
        // Guard against 1/delta landing a hair above an integer.
        ((1.0 / self.delta) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }
}

fn check_order(order: usize) -> Result<()> {
    if order < 2 || !order.is_multiple_of(2) {
        return Err(GeoError::InvalidArgument(format!(
            "composition order must be even and >= 2, got {order}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicPath {
    pub states: Vec<PhasePoint>,
    pub lambdas: Vec<f64>,
    pub energies: Vec<f64>,
    pub delta: f64,
    pub order: usize,
    pub omega: f64,
    /// Largest copy gap seen during integration.
    pub max_copy_gap: f64,
}

impl GeodesicPath {
    pub fn endpoint(&self) -> &[f64] {
        &self.states[self.states.len() - 1].q
    }

    /// `max_k |H_k − H_0| / max(|H_0|, 1e-12)`.
    pub fn relative_drift(&self) -> f64 {
        relative_drift(&self.energies)
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.q.clone()).collect()
    }
}

pub(crate) fn relative_drift(energies: &[f64]) -> f64 {
    let e0 = energies[0];
    let scale = e0.abs().max(1e-12);
    energies
        .iter()
        .map(|e| (e - e0).abs() / scale)
        .fold(0.0, f64::max)
}

/// `H = ½ g^ij p_i p_j`.
pub fn hamiltonian(im: &dyn Immersion, pp: &PhasePoint) -> Result<f64> {
    let m = induced_metric(im, &pp.q)?;
    Ok(0.5 * quadratic(&m.g_inv, &pp.p, &pp.p))
}

/// `(∂H/∂q, ∂H/∂p)` from a metric jet with first derivatives.
fn hamiltonian_gradient(mj: &MetricJet, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = mj.dim();
    let gi = mj.g_inv();
    let v: Vec<f64> = (0..d)
        .map(|i| (0..d).map(|j| gi[(i, j)] * p[j]).sum())
        .collect();
    // ∂_k H = ½ p ∂_k(g^-1) p = −½ vᵀ (∂_k g) v
    let dq = (0..d)
        .map(|k| -0.5 * quadratic(&mj.dg[k], &v, &v))
        .collect();
    (dq, v)
}

/// `(q̇, ṗ) = (g^-1 p, −∂H/∂q)`.
pub fn hamilton_rhs(im: &dyn Immersion, pp: &PhasePoint) -> Result<(Vec<f64>, Vec<f64>)> {
    let mj = metric_jet(im, &pp.q, 1)?;
    let (dh_dq, dh_dp) = hamiltonian_gradient(&mj, &pp.p);
    Ok((dh_dp, dh_dq.into_iter().map(|v| -v).collect()))
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Flow of `H(q, y)`: `q`, `y` fixed.
fn flow_a(im: &dyn Immersion, s: &mut ExtendedPhasePoint, h: f64) -> Result<()> {
    let mj = metric_jet(im, &s.q, 1)?;
    let (dq, dp) = hamiltonian_gradient(&mj, &s.y);
    axpy(&mut s.p, -h, &dq);
    axpy(&mut s.x, h, &dp);
    Ok(())
}

/// Flow of `H(x, p)`: `x`, `p` fixed.
fn flow_b(im: &dyn Immersion, s: &mut ExtendedPhasePoint, h: f64) -> Result<()> {
    let mj = metric_jet(im, &s.x, 1)?;
    let (dq, dp) = hamiltonian_gradient(&mj, &s.p);
    axpy(&mut s.q, h, &dp);
    axpy(&mut s.y, -h, &dq);
    Ok(())
}

/// Flow of `ω ½(|q − x|² + |p − y|²)`: rotates the differences by `2ωh`.
fn flow_c(s: &mut ExtendedPhasePoint, h: f64, omega: f64) {
    let (sn, cs) = (2.0 * omega * h).sin_cos();
    for i in 0..s.q.len() {
        let (q, p, x, y) = (s.q[i], s.p[i], s.x[i], s.y[i]);
        let (sq, dq) = (q + x, q - x);
        let (sp, dp) = (p + y, p - y);
        let rq = cs * dq + sn * dp;
        let rp = -sn * dq + cs * dp;
        s.q[i] = 0.5 * (sq + rq);
        s.x[i] = 0.5 * (sq - rq);
        s.p[i] = 0.5 * (sp + rp);
        s.y[i] = 0.5 * (sp - rp);
    }
}

/// One step of the symmetric second-order map
/// `A(δ/2) ∘ B(δ/2) ∘ C(δ) ∘ B(δ/2) ∘ A(δ/2)`.
pub fn tao_step_order2(
    im: &dyn Immersion,
    s: &ExtendedPhasePoint,
    delta: f64,
    omega: f64,
) -> Result<ExtendedPhasePoint> {
    let mut t = s.clone();
    let half = 0.5 * delta;
    flow_a(im, &mut t, half)?;
    flow_b(im, &mut t, half)?;
    flow_c(&mut t, delta, omega);
    flow_b(im, &mut t, half)?;
    flow_a(im, &mut t, half)?;
    if !t.is_finite() {
        return Err(GeoError::NonFinite);
    }
    Ok(t)
}

/// Outer weight of the triple jump that turns a symmetric method of order
/// `base_order` into one of order `base_order + 2`:
/// `1 / (2 − 2^{1/(base_order + 1)})`.
pub fn triple_jump_weight(base_order: usize) -> f64 {
    1.0 / (2.0 - 2f64.powf(1.0 / (base_order as f64 + 1.0)))
}

pub type StepFn<'a> =
    Arc<dyn Fn(&ExtendedPhasePoint, f64) -> Result<ExtendedPhasePoint> + Send + Sync + 'a>;

/// Lift a symmetric second-order step to even order `order` by repeated
/// triple jumps. `order == 2` returns `base` unchanged.
pub fn yoshida_compose(base: StepFn<'_>, order: usize) -> Result<StepFn<'_>> {
    check_order(order)?;
    let mut step = base;
    let mut k = 2;
    while k < order {
        let w = triple_jump_weight(k);
        let inner = step.clone();
        step = Arc::new(move |s: &ExtendedPhasePoint, h: f64| {
            let a = inner(s, w * h)?;
            let b = inner(&a, (1.0 - 2.0 * w) * h)?;
            inner(&b, w * h)
        });
        k += 2;
    }
    Ok(step)
}

/// The configured order-`cfg.order` step on `im`.
pub fn composed_step<'a>(im: &'a dyn Immersion, cfg: &IntegratorConfig) -> Result<StepFn<'a>> {
    let omega = cfg.omega;
    yoshida_compose(
        Arc::new(move |s: &ExtendedPhasePoint, h: f64| tao_step_order2(im, s, h, omega)),
        cfg.order,
    )
}

/// Integrate `steps` steps of size `h`, returning every state including the
/// initial one. Failures carry the step index and affine parameter.
pub fn integrate_extended(
    im: &dyn Immersion,
    start: &ExtendedPhasePoint,
    h: f64,
    steps: usize,
    cfg: &IntegratorConfig,
) -> Result<Vec<ExtendedPhasePoint>> {
    let step = composed_step(im, cfg)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(start.clone());
    for k in 1..=steps {
        let lambda = k as f64 * h;
        let next = step(&out[k - 1], h).map_err(|e| match e {
            GeoError::NonFinite | GeoError::Domain { .. } => GeoError::BlowUp { step: k, lambda },
            e => e.at_lambda(lambda),
        })?;
        out.push(next);
    }
    Ok(out)
}

/// Geodesic from `p` with initial velocity `v`, integrated over `λ ∈ [0, 1]`.
pub fn exp_map(
    im: &dyn Immersion,
    p: &[f64],
    v: &[f64],
    cfg: &IntegratorConfig,
) -> Result<GeodesicPath> {
    cfg.validate()?;
    let d = im.chart_dim();
    if p.len() != d || v.len() != d {
        return Err(GeoError::Shape(format!(
            "expected {d}-dimensional point and velocity"
        )));
    }
    let m0 = induced_metric(im, p).map_err(|e| e.at_lambda(0.0))?;
    let start = PhasePoint {
        q: p.to_vec(),
        p: m0.lower(v),
    };
    let n = cfg.steps();
    let h = 1.0 / n as f64;
    let ext = integrate_extended(im, &ExtendedPhasePoint::new(&start), h, n, cfg)?;

    let mut max_copy_gap = 0.0f64;
    let mut energies = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    for (k, s) in ext.iter().enumerate() {
        max_copy_gap = max_copy_gap.max(s.copy_gap());
        let pp = s.phase_point();
        energies.push(hamiltonian(im, &pp).map_err(|e| e.at_lambda(k as f64 * h))?);
        states.push(pp);
    }
    let lambdas = (0..=n).map(|k| k as f64 * h).collect();
    let path = GeodesicPath {
        states,
        lambdas,
        energies,
        delta: h,
        order: cfg.order,
        omega: cfg.omega,
        max_copy_gap,
    };

    let drift = path.relative_drift();
    if drift > cfg.drift_error {
        return Err(GeoError::EnergyDrift {
            drift,
            bound: cfg.drift_error,
        });
    }
    if drift > cfg.drift_warn {
        warn!(
            "relative energy drift {drift:.3e} exceeds {:.1e}",
            cfg.drift_warn
        );
    }
    if max_copy_gap > cfg.coherence_warn {
        warn!("phase-space copies separated by {max_copy_gap:.3e}; consider a larger omega or smaller delta");
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{Euclidean, Sphere};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

    #[test]
    fn hamiltonian_examples() {
        let e = Euclidean { dim: 2 };
        assert_eq!(
            hamiltonian(
                &e,
                &PhasePoint {
                    q: vec![1.0, 2.0],
                    p: vec![3.0, 4.0]
                }
            )
            .unwrap(),
            12.5
        );
        assert_eq!(
            hamiltonian(
                &e,
                &PhasePoint {
                    q: vec![1.0, 2.0],
                    p: vec![0.0, 0.0]
                }
            )
            .unwrap(),
            0.0
        );
        let s = Sphere { radius: 1.0 };
        let h = hamiltonian(
            &s,
            &PhasePoint {
                q: vec![FRAC_PI_6, 0.0],
                p: vec![0.0, 1.0],
            },
        )
        .unwrap();
        assert!((h - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rhs_examples() {
        let (dq, dp) = hamilton_rhs(
            &Euclidean { dim: 2 },
            &PhasePoint {
                q: vec![0.0, 0.0],
                p: vec![1.0, 0.0],
            },
        )
        .unwrap();
        assert_eq!((dq, dp), (vec![1.0, 0.0], vec![0.0, 0.0]));
        let (_, dp) = hamilton_rhs(
            &Sphere { radius: 1.0 },
            &PhasePoint {
                q: vec![FRAC_PI_2, 0.0],
                p: vec![0.0, 1.0],
            },
        )
        .unwrap();
        assert!(dp[0].abs() < 1e-15);
    }

    #[test]
    fn flat_step_is_a_straight_drift() {
        let e = Euclidean { dim: 2 };
        let s = ExtendedPhasePoint::new(&PhasePoint {
            q: vec![0.5, 0.25],
            p: vec![2.0, -1.0],
        });
        let t = tao_step_order2(&e, &s, 0.125, 0.3).unwrap();
        assert_eq!(t.q, vec![0.75, 0.125]);
        assert_eq!(t.q, t.x);
        assert_eq!(t.p, t.y);
    }

    #[test]
    fn weights() {
        assert!((triple_jump_weight(2) - 1.3512071919596578).abs() < 1e-15);
        assert!((triple_jump_weight(4) - 1.1746).abs() < 1e-4);
    }

    #[test]
    fn order_two_composition_is_the_base_step() {
        let e = Euclidean { dim: 1 };
        let base: StepFn = Arc::new(|s, h| tao_step_order2(&e, s, h, 0.01));
        let composed = yoshida_compose(base.clone(), 2).unwrap();
        let s = ExtendedPhasePoint::new(&PhasePoint {
            q: vec![0.1],
            p: vec![0.7],
        });
        assert_eq!(composed(&s, 0.01).unwrap(), base(&s, 0.01).unwrap());
        assert!(yoshida_compose(base, 3).is_err());
    }

    #[test]
    fn flat_exponential_map() {
        let path = exp_map(
            &Euclidean { dim: 2 },
            &[0.0, 0.0],
            &[3.0, 4.0],
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(path.states.len(), 1001);
        assert!((path.endpoint()[0] - 3.0).abs() < 1e-9 && (path.endpoint()[1] - 4.0).abs() < 1e-9);
        assert!(path.energies.iter().all(|e| (e - 12.5).abs() < 1e-9));
    }

    #[test]
    fn equator_and_meridian() {
        let s = Sphere { radius: 1.0 };
        let cfg = IntegratorConfig::default();
        let path = exp_map(&s, &[FRAC_PI_2, 0.0], &[0.0, 1.0], &cfg).unwrap();
        assert!((path.endpoint()[0] - FRAC_PI_2).abs() < 1e-9);
        assert!((path.endpoint()[1] - 1.0).abs() < 1e-9);
        // A meridian of length π/2 − 0.1 from the equator toward the north pole.
        let len = FRAC_PI_2 - 0.1;
        let path = exp_map(&s, &[FRAC_PI_2, 0.3], &[-len, 0.0], &cfg).unwrap();
        assert!((path.endpoint()[0] - 0.1).abs() < 1e-4);
        assert!((path.endpoint()[1] - 0.3).abs() < 1e-12);
        assert!(path.relative_drift() < 1e-6);
        let _ = PI;
    }

    #[test]
    fn time_reversal_returns_to_start() {
        let s = Sphere { radius: 1.0 };
        let cfg = IntegratorConfig::default();
        let m = induced_metric(&s, &[1.0, 0.2]).unwrap();
        let start = ExtendedPhasePoint::new(&PhasePoint {
            q: vec![1.0, 0.2],
            p: m.lower(&[0.3, 0.8]),
        });
        let fwd = integrate_extended(&s, &start, 1e-3, 1000, &cfg).unwrap();
        let back = integrate_extended(&s, &fwd[1000].reversed(), 1e-3, 1000, &cfg).unwrap();
        let end = &back[1000];
        for i in 0..2 {
            assert!((end.q[i] - start.q[i]).abs() < 1e-8);
            assert!((end.p[i] + start.p[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = IntegratorConfig {
            order: 3,
            ..Default::default()
        };
        assert!(exp_map(&Euclidean { dim: 1 }, &[0.0], &[1.0], &cfg).is_err());
        let cfg = IntegratorConfig {
            delta: 0.0,
            ..Default::default()
        };
        assert!(exp_map(&Euclidean { dim: 1 }, &[0.0], &[1.0], &cfg).is_err());
    }
}
