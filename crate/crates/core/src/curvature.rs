//! Riemann and Ricci tensors, the Ricci scalar, and the curvature weight `ψ`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::manifold::{christoffel_derivatives, christoffel_from_jet, metric_jet, Immersion};

#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureBundle {
    dim: usize,
    /// `R^l_ijk`, stored `[l][i][j][k]`.
    riemann: Vec<f64>,
    pub ricci: DMatrix<f64>,
    pub scalar: f64,
}

impl CurvatureBundle {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn riemann(&self, l: usize, i: usize, j: usize, k: usize) -> f64 {
        let d = self.dim;
        self.riemann[((l * d + i) * d + j) * d + k]
    }
}

/// `R^l_ijk = ∂_jΓ^l_ik − ∂_kΓ^l_ij + Γ^l_jm Γ^m_ik − Γ^l_km Γ^m_ij`,
/// `R_ij = R^m_imj`, `R = g^ij R_ij`.
pub fn curvature_at(im: &dyn Immersion, p: &[f64]) -> Result<CurvatureBundle> {
    let mj = metric_jet(im, p, 2)?;
    let d = mj.dim();
    let gamma = christoffel_from_jet(&mj);
    let dgamma = christoffel_derivatives(&mj);
    // ∂_a Γ^b_ce
    let dg = |a: usize, b: usize, c: usize, e: usize| dgamma[((a * d + b) * d + c) * d + e];

    let mut riemann = vec![0.0; d * d * d * d];
    for l in 0..d {
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let mut v = dg(j, l, i, k) - dg(k, l, i, j);
                    for m in 0..d {
                        v += gamma.get(l, j, m) * gamma.get(m, i, k)
                            - gamma.get(l, k, m) * gamma.get(m, i, j);
                    }
                    riemann[((l * d + i) * d + j) * d + k] = v;
                }
            }
        }
    }
    let mut ricci = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            ricci[(i, j)] = (0..d).map(|m| riemann[((m * d + i) * d + m) * d + j]).sum();
        }
    }
    let gi = mj.g_inv();
    let scalar = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| gi[(i, j)] * ricci[(i, j)])
        .sum();
    Ok(CurvatureBundle {
        dim: d,
        riemann,
        ricci,
        scalar,
    })
}

pub fn scalar_curvature(im: &dyn Immersion, p: &[f64]) -> Result<f64> {
    Ok(curvature_at(im, p)?.scalar)
}

/// How negative scalar curvature enters `ψ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeCurvature {
    /// `max(R, 0)`.
    #[default]
    Clamp,
    /// `|R|`.
    Abs,
}

impl NegativeCurvature {
    pub fn apply(self, r: f64) -> f64 {
        match self {
            NegativeCurvature::Clamp => r.max(0.0),
            NegativeCurvature::Abs => r.abs(),
        }
    }
}

/// `ψ(R; α) = 1 + α log(1 + max(R, 0))`.
pub fn psi(scalar_r: f64, alpha: f64) -> f64 {
    psi_with(scalar_r, alpha, NegativeCurvature::Clamp)
}

pub fn psi_with(scalar_r: f64, alpha: f64, mode: NegativeCurvature) -> f64 {
    1.0 + alpha * mode.apply(scalar_r).ln_1p()
}
