use nalgebra::{DMatrix, DVector};

use super::immersion::Immersion;
use crate::diff::{self, Jet};
use crate::error::{GeoError, Result};

/// Smallest admissible singular value of the immersion Jacobian.
pub const MIN_SINGULAR_VALUE: f64 = 1e-10;
/// Smallest admissible reciprocal condition number of `g`.
pub const MIN_RCOND: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricTensor {
    pub point: Vec<f64>,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
}

impl MetricTensor {
    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    /// `g_ij v^i w^j`.
    pub fn inner(&self, v: &[f64], w: &[f64]) -> f64 {
        quadratic(&self.g, v, w)
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }

    /// `v_i = g_ij v^j`.
    pub fn lower(&self, v: &[f64]) -> Vec<f64> {
        mat_vec(&self.g, v)
    }

    /// `w^i = g^ij w_j`.
    pub fn raise(&self, w: &[f64]) -> Vec<f64> {
        mat_vec(&self.g_inv, w)
    }

    pub fn determinant(&self) -> f64 {
        self.g.determinant()
    }
}

/// Metric with its first and optionally second chart derivatives.
#[derive(Clone, Debug)]
pub struct MetricJet {
    pub metric: MetricTensor,
    /// `dg[k]` is `∂g/∂x^k`; empty when not requested.
    pub dg: Vec<DMatrix<f64>>,
    /// `ddg[k * d + l]` is `∂²g/∂x^k∂x^l`; empty when not requested.
    pub ddg: Vec<DMatrix<f64>>,
}

impl MetricJet {
    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.metric.g
    }

    pub fn g_inv(&self) -> &DMatrix<f64> {
        &self.metric.g_inv
    }

    /// `∂g^{-1}/∂x^k = -g^{-1} (∂_k g) g^{-1}`.
    pub fn dg_inv(&self, k: usize) -> DMatrix<f64> {
        let gi = self.g_inv();
        -(gi * &self.dg[k] * gi)
    }
}

/// Induced metric `g = JᵀJ` at `p`.
pub fn induced_metric(im: &dyn Immersion, p: &[f64]) -> Result<MetricTensor> {
    Ok(metric_jet(im, p, 0)?.metric)
}

/// Induced metric and `derivs` (0, 1 or 2) orders of its chart derivatives.
pub fn metric_jet(im: &dyn Immersion, p: &[f64], derivs: usize) -> Result<MetricJet> {
    let d = im.chart_dim();
    if p.len() != d {
        return Err(GeoError::Shape(format!(
            "point has {} coordinates, chart has {d}",
            p.len()
        )));
    }
    if derivs > 2 {
        return Err(GeoError::InvalidArgument(
            "metric derivatives above order 2".into(),
        ));
    }
    let out = diff::evaluate_with_jets(|x| im.map(x), p, derivs + 1)?;
    metric_from_jets(&out, p, d, derivs)
}

pub(crate) fn metric_from_jets(
    out: &[Jet],
    p: &[f64],
    d: usize,
    derivs: usize,
) -> Result<MetricJet> {
    let mut g = DMatrix::zeros(d, d);
    let mut dg = vec![DMatrix::zeros(d, d); if derivs >= 1 { d } else { 0 }];
    let mut ddg = vec![DMatrix::zeros(d, d); if derivs >= 2 { d * d } else { 0 }];
    for a in out {
        for i in 0..d {
            for j in i..d {
                g[(i, j)] += a.d1(i) * a.d1(j);
                if derivs >= 1 {
                    for k in 0..d {
                        dg[k][(i, j)] += a.d2(i, k) * a.d1(j) + a.d1(i) * a.d2(j, k);
                    }
                }
                if derivs >= 2 {
                    for k in 0..d {
                        for l in k..d {
                            ddg[k * d + l][(i, j)] += a.d3(i, k, l) * a.d1(j)
                                + a.d2(i, k) * a.d2(j, l)
                                + a.d2(i, l) * a.d2(j, k)
                                + a.d1(i) * a.d3(j, k, l);
                        }
                    }
                }
            }
        }
    }
    symmetrize_upper(&mut g);
    dg.iter_mut().for_each(symmetrize_upper);
    for k in 0..ddg.len().min(d) {
        for l in k..d {
            symmetrize_upper(&mut ddg[k * d + l]);
            if l != k {
                ddg[l * d + k] = ddg[k * d + l].clone();
            }
        }
    }
    let g_inv = checked_inverse(&g, p)?;
    Ok(MetricJet {
        metric: MetricTensor {
            point: p.to_vec(),
            g,
            g_inv,
        },
        dg,
        ddg,
    })
}

fn symmetrize_upper(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// Inverse of a symmetric metric, refusing degenerate or ill-conditioned input.
fn checked_inverse(g: &DMatrix<f64>, p: &[f64]) -> Result<DMatrix<f64>> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(GeoError::NonFinite);
    }
    let eig = g.clone().symmetric_eigen();
    let lmin = eig.eigenvalues.min();
    let lmax = eig.eigenvalues.max();
    let sigma_min = lmin.max(0.0).sqrt();
    if sigma_min <= MIN_SINGULAR_VALUE {
        return Err(GeoError::DegenerateMetric {
            point: p.to_vec(),
            sigma_min,
        });
    }
    let rcond = lmin / lmax;
    if rcond < MIN_RCOND {
        return Err(GeoError::IllConditioned {
            point: p.to_vec(),
            rcond,
        });
    }
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| GeoError::DegenerateMetric {
            point: p.to_vec(),
            sigma_min,
        })?;
    let mut inv = chol.inverse();
    let d = inv.nrows();
    for i in 0..d {
        for j in 0..i {
            let m = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = m;
            inv[(j, i)] = m;
        }
    }
    Ok(inv)
}

/// `Γ^k_ij`, stored `[k][i][j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChristoffelSymbols {
    dim: usize,
    gamma: Vec<f64>,
}

impl ChristoffelSymbols {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.gamma[(k * self.dim + i) * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gamma
    }

    /// `Γ^k_ij a^i b^j` for each `k`.
    pub fn contract(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|k| {
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        s += self.get(k, i, j) * a[i] * b[j];
                    }
                }
                s
            })
            .collect()
    }
}

/// First-kind symbols `Γ_{m,ij} = ½(g_mi,j + g_mj,i − g_ij,m)`, stored `[m][i][j]`.
fn first_kind(dg: &[DMatrix<f64>], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d * d];
    for m in 0..d {
        for i in 0..d {
            for j in i..d {
                let v = 0.5 * (dg[j][(m, i)] + dg[i][(m, j)] - dg[m][(i, j)]);
                out[(m * d + i) * d + j] = v;
                out[(m * d + j) * d + i] = v;
            }
        }
    }
    out
}

pub fn christoffel_from_jet(mj: &MetricJet) -> ChristoffelSymbols {
    let d = mj.dim();
    assert!(mj.dg.len() == d, "metric jet lacks first derivatives");
    let first = first_kind(&mj.dg, d);
    let gi = mj.g_inv();
    let mut gamma = vec![0.0; d * d * d];
    for k in 0..d {
        for i in 0..d {
            for j in i..d {
                let v: f64 = (0..d)
                    .map(|m| gi[(k, m)] * first[(m * d + i) * d + j])
                    .sum();
                gamma[(k * d + i) * d + j] = v;
                gamma[(k * d + j) * d + i] = v;
            }
        }
    }
    ChristoffelSymbols { dim: d, gamma }
}

/// `∂_l Γ^k_ij`, stored `[l][k][i][j]`.
pub fn christoffel_derivatives(mj: &MetricJet) -> Vec<f64> {
    let d = mj.dim();
    assert!(mj.ddg.len() == d * d, "metric jet lacks second derivatives");
    let first = first_kind(&mj.dg, d);
    let gi = mj.g_inv();
    let mut out = vec![0.0; d * d * d * d];
    for l in 0..d {
        let dgi = mj.dg_inv(l);
        // ∂_l Γ_{m,ij}
        let mut dfirst = vec![0.0; d * d * d];
        for m in 0..d {
            for i in 0..d {
                for j in 0..d {
                    dfirst[(m * d + i) * d + j] = 0.5
                        * (mj.ddg[j * d + l][(m, i)] + mj.ddg[i * d + l][(m, j)]
                            - mj.ddg[m * d + l][(i, j)]);
                }
            }
        }
        for k in 0..d {
            for i in 0..d {
                for j in i..d {
                    let mut v = 0.0;
                    for m in 0..d {
                        v += dgi[(k, m)] * first[(m * d + i) * d + j]
                            + gi[(k, m)] * dfirst[(m * d + i) * d + j];
                    }
                    out[((l * d + k) * d + i) * d + j] = v;
                    out[((l * d + k) * d + j) * d + i] = v;
                }
            }
        }
    }
    out
}

pub fn christoffel(im: &dyn Immersion, p: &[f64]) -> Result<ChristoffelSymbols> {
    Ok(christoffel_from_jet(&metric_jet(im, p, 1)?))
}

/// `(∇_v w)^k = v^j ∂_j w^k + Γ^k_ij v^j w^i` for a vector field given on jets.
pub fn covariant_derivative<F>(
    im: &dyn Immersion,
    p: &[f64],
    v: &[f64],
    w_field: F,
) -> Result<Vec<f64>>
where
    F: FnOnce(&[Jet]) -> Vec<Jet>,
{
    let d = im.chart_dim();
    if v.len() != d {
        return Err(GeoError::Shape(format!(
            "tangent vector has {} components, chart has {d}",
            v.len()
        )));
    }
    let w = diff::evaluate_with_jets(w_field, p, 1)?;
    if w.len() != d {
        return Err(GeoError::Shape(format!(
            "vector field has {} components, chart has {d}",
            w.len()
        )));
    }
    let gamma = christoffel(im, p)?;
    let wv: Vec<f64> = w.iter().map(Jet::value).collect();
    let turn = gamma.contract(&wv, v);
    Ok((0..d)
        .map(|k| (0..d).map(|j| v[j] * w[k].d1(j)).sum::<f64>() + turn[k])
        .collect())
}

/// `sqrt(det g)`.
pub fn magnification_factor(im: &dyn Immersion, p: &[f64]) -> Result<f64> {
    let m = induced_metric(im, p)?;
    let det = m.determinant();
    if !(det > 0.0) {
        return Err(GeoError::DegenerateMetric {
            point: p.to_vec(),
            sigma_min: 0.0,
        });
    }
    Ok(det.sqrt())
}

pub(crate) fn quadratic(m: &DMatrix<f64>, v: &[f64], w: &[f64]) -> f64 {
    let d = m.nrows();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += m[(i, j)] * v[i] * w[j];
        }
    }
    s
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v))
        .iter()
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{Euclidean, Peaks, Sphere};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6};

    #[test]
    fn euclidean_metric_is_identity() {
        let m = induced_metric(&Euclidean { dim: 2 }, &[0.4, -7.0]).unwrap();
        assert_eq!(m.g, DMatrix::identity(2, 2));
        assert_eq!(m.g_inv, DMatrix::identity(2, 2));
    }

    #[test]
    fn sphere_metric_on_equator() {
        let m = induced_metric(&Sphere { radius: 1.0 }, &[FRAC_PI_2, 0.0]).unwrap();
        assert!((m.g[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((m.g[(1, 1)] - 1.0).abs() < 1e-15);
        assert!(m.g[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn sphere_christoffel_closed_form() {
        let th = 0.9;
        let g = christoffel(&Sphere { radius: 1.0 }, &[th, 0.3]).unwrap();
        assert!((g.get(0, 1, 1) + th.sin() * th.cos()).abs() < 1e-14);
        assert!((g.get(1, 0, 1) - th.cos() / th.sin()).abs() < 1e-14);
        assert!((g.get(1, 1, 0) - th.cos() / th.sin()).abs() < 1e-14);
        for (k, i, j) in [(0, 0, 0), (0, 0, 1), (1, 0, 0), (1, 1, 1)] {
            assert!(g.get(k, i, j).abs() < 1e-14);
        }
    }

    #[test]
    fn euclidean_christoffel_vanishes() {
        let g = christoffel(&Euclidean { dim: 3 }, &[1.0, 2.0, 3.0]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn covariant_derivative_examples() {
        let e = Euclidean { dim: 2 };
        let c = covariant_derivative(&e, &[0.3, 0.2], &[1.0, 0.0], |_| {
            vec![Jet::constant(1.0), Jet::constant(2.0)]
        })
        .unwrap();
        assert_eq!(c, vec![0.0, 0.0]);
        let c = covariant_derivative(&e, &[0.3, 0.2], &[1.0, 0.0], |x| x.to_vec()).unwrap();
        assert_eq!(c, vec![1.0, 0.0]);
        let s = Sphere { radius: 1.0 };
        let c = covariant_derivative(&s, &[FRAC_PI_3, 0.0], &[0.0, 1.0], |_| {
            vec![Jet::constant(0.0), Jet::constant(1.0)]
        })
        .unwrap();
        assert!((c[0] + FRAC_PI_3.sin() * FRAC_PI_3.cos()).abs() < 1e-14);
        assert!(c[1].abs() < 1e-14);
    }

    #[test]
    fn magnification_examples() {
        assert_eq!(
            magnification_factor(&Euclidean { dim: 2 }, &[0.0, 0.0]).unwrap(),
            1.0
        );
        let s = Sphere { radius: 1.0 };
        assert!((magnification_factor(&s, &[FRAC_PI_2, 0.0]).unwrap() - 1.0).abs() < 1e-14);
        assert!((magnification_factor(&s, &[FRAC_PI_6, 0.0]).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn sphere_pole_is_degenerate() {
        let err = induced_metric(&Sphere { radius: 1.0 }, &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, GeoError::DegenerateMetric { .. }), "{err:?}");
    }

    #[test]
    fn peaks_metric_is_graph_metric() {
        let p = [0.4, -0.8];
        let m = metric_jet(&Peaks, &p, 0).unwrap();
        let h =
            diff::evaluate_with_jets(|x| vec![crate::manifold::peaks_height(&x[0], &x[1])], &p, 1)
                .unwrap();
        let (fx, fy) = (h[0].d1(0), h[0].d1(1));
        assert!((m.g()[(0, 0)] - (1.0 + fx * fx)).abs() < 1e-14);
        assert!((m.g()[(0, 1)] - fx * fy).abs() < 1e-14);
        assert!((m.g()[(1, 1)] - (1.0 + fy * fy)).abs() < 1e-14);
        let id = m.g() * m.g_inv();
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-12);
    }
}
