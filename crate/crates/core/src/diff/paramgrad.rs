//! Parameter gradients of losses that contain input derivatives of a network.
//!
//! Inputs carry forward jets (value, gradient and optionally packed Hessian)
//! with respect to a small set of seed variables. Every layer propagates the
//! whole jet, and the backward pass applies closed-form adjoint rules for the
//! affine map and the tanh chain rule, so the result is the exact gradient of
//! a loss built from `φ`, `∂φ` and `∂²φ`.
//!
//! A batch is stored component-major: for `n` samples, column `c * n + i` of
//! the activation matrix holds component `c` of sample `i`. Each affine layer
//! is then a single matrix product over all components at once.

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;

use super::jet::{pair_count, pair_index, Jet};
use crate::error::{GeoError, Result};
use crate::nn::{Activation, MlpNetwork};

/// Samples per work unit. Fixed so that gradient summation order, and hence
/// the floating-point result, never depends on the thread count.
const CHUNK: usize = 256;

/// Which input derivatives a batch carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JetLayout {
    pub vars: usize,
    /// 0, 1 or 2.
    pub order: usize,
}

impl JetLayout {
    pub fn new(vars: usize, order: usize) -> Self {
        assert!(order <= 2, "batched jets support order <= 2");
        JetLayout { vars, order }
    }

    /// Components per feature: value, `vars` first partials, packed second partials.
    pub fn comps(&self) -> usize {
        let mut k = 1;
        if self.order >= 1 {
            k += self.vars;
        }
        if self.order >= 2 {
            k += pair_count(self.vars);
        }
        k
    }

    /// Component index of `∂/∂x_i`.
    #[inline]
    pub fn grad(&self, i: usize) -> usize {
        1 + i
    }

    /// Component index of `∂²/∂x_i∂x_j`.
    #[inline]
    pub fn hess(&self, i: usize, j: usize) -> usize {
        1 + self.vars + pair_index(i, j)
    }
}

#[derive(Clone, Debug)]
pub struct JetBatch {
    layout: JetLayout,
    samples: usize,
    /// Shape `(features, comps * samples)`.
    data: Array2<f64>,
}

impl JetBatch {
    /// Raw coordinates as inputs: feature `k` of sample `i` is seed variable `k`.
    pub fn seeded(points: &[Vec<f64>], order: usize) -> Self {
        let features = points.first().map_or(0, Vec::len);
        let layout = JetLayout::new(features, order);
        let n = points.len();
        let mut data = Array2::zeros((features, layout.comps() * n));
        for (i, p) in points.iter().enumerate() {
            assert_eq!(p.len(), features, "ragged batch");
            for (k, &x) in p.iter().enumerate() {
                data[[k, i]] = x;
                if order >= 1 {
                    data[[k, layout.grad(k) * n + i]] = 1.0;
                }
            }
        }
        JetBatch {
            layout,
            samples: n,
            data,
        }
    }

    /// Build from per-sample feature jets. Jets must track at most
    /// `layout.vars` variables; derivatives above `layout.order` are dropped.
    pub fn from_jets(features: &[Vec<Jet>], layout: JetLayout) -> Self {
        let n = features.len();
        let nf = features.first().map_or(0, Vec::len);
        let k = layout.comps();
        let mut data = Array2::zeros((nf, k * n));
        for (i, row) in features.iter().enumerate() {
            assert_eq!(row.len(), nf, "ragged batch");
            for (f, j) in row.iter().enumerate() {
                assert!(
                    j.vars() <= layout.vars,
                    "jet tracks more variables than the layout"
                );
                data[[f, i]] = j.value();
                if layout.order >= 1 {
                    for a in 0..j.vars().min(layout.vars) {
                        data[[f, layout.grad(a) * n + i]] = j.d1(a);
                    }
                }
                if layout.order >= 2 {
                    for b in 0..j.vars().min(layout.vars) {
                        for a in 0..=b {
                            data[[f, layout.hess(a, b) * n + i]] = j.d2(a, b);
                        }
                    }
                }
            }
        }
        JetBatch {
            layout,
            samples: n,
            data,
        }
    }

    pub fn layout(&self) -> JetLayout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    pub fn features(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, feature: usize, comp: usize, sample: usize) -> f64 {
        self.data[[feature, comp * self.samples + sample]]
    }

    fn chunk(&self, start: usize, end: usize) -> Array2<f64> {
        let k = self.layout.comps();
        let m = end - start;
        let mut out = Array2::zeros((self.features(), k * m));
        for c in 0..k {
            out.slice_mut(s![.., c * m..(c + 1) * m]).assign(
                &self
                    .data
                    .slice(s![.., c * self.samples + start..c * self.samples + end]),
            );
        }
        out
    }
}

/// A loss that is a sum of per-sample contributions, each a function of the
/// network's output jets at that sample.
pub trait JetLoss: Sync {
    /// `out[o * comps + c]` is component `c` of output `o`. Returns the
    /// contribution of `sample` and writes its derivative with respect to each
    /// output component into `adjoint` (same packing, zero-initialised).
    fn sample_loss(&self, sample: usize, out: &[f64], adjoint: &mut [f64]) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradient {
    pub loss_value: f64,
    /// Aligned with [`MlpNetwork::params`].
    pub gradient: Vec<f64>,
}

/// Exact gradient of `Σ_i loss_i` with respect to the network parameters.
pub fn loss_parameter_gradient(
    net: &MlpNetwork,
    batch: &JetBatch,
    loss: &dyn JetLoss,
) -> Result<ParamGradient> {
    if batch.is_empty() {
        return Err(GeoError::InvalidArgument("empty batch".into()));
    }
    if batch.features() != net.input_dim() {
        return Err(GeoError::Shape(format!(
            "batch has {} features, network expects {}",
            batch.features(),
            net.input_dim()
        )));
    }
    let n = batch.len();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts: Vec<Result<(f64, Vec<f64>)>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + CHUNK).min(n);
            chunk_gradient(net, batch.layout, &batch.chunk(start, end), start, loss)
        })
        .collect();
    let mut gradient = vec![0.0; net.param_count()];
    let mut loss_value = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss_value += l;
        for (a, b) in gradient.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok(ParamGradient {
        loss_value,
        gradient,
    })
}

fn chunk_gradient(
    net: &MlpNetwork,
    layout: JetLayout,
    input: &Array2<f64>,
    offset: usize,
    loss: &dyn JetLoss,
) -> Result<(f64, Vec<f64>)> {
    let k = layout.comps();
    let m = input.ncols() / k;

    // Forward, keeping every layer input and pre-activation.
    let mut inputs: Vec<Array2<f64>> = Vec::with_capacity(net.layers().len());
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(net.layers().len());
    let mut a = input.clone();
    for layer in net.layers() {
        let mut u = layer.weight.dot(&a);
        {
            let mut value_block = u.slice_mut(s![.., 0..m]);
            for (mut row, &b) in value_block.outer_iter_mut().zip(layer.bias.iter()) {
                row += b;
            }
        }
        let z = match layer.activation {
            Activation::Tanh => tanh_forward(&u, layout, m),
            Activation::Identity => u.clone(),
        };
        inputs.push(a);
        pre.push(u);
        a = z;
    }

    // Per-sample loss and output adjoints.
    let outs = a.nrows();
    let mut zbar = Array2::<f64>::zeros(a.raw_dim());
    let mut total = 0.0;
    let mut packed = vec![0.0; outs * k];
    let mut adj = vec![0.0; outs * k];
    for i in 0..m {
        for o in 0..outs {
            for c in 0..k {
                packed[o * k + c] = a[[o, c * m + i]];
            }
        }
        adj.iter_mut().for_each(|v| *v = 0.0);
        let li = loss.sample_loss(offset + i, &packed, &mut adj)?;
        if !li.is_finite() || adj.iter().any(|v| !v.is_finite()) {
            return Err(GeoError::Training {
                epoch: 0,
                sample: offset + i,
            });
        }
        total += li;
        for o in 0..outs {
            for c in 0..k {
                zbar[[o, c * m + i]] = adj[o * k + c];
            }
        }
    }

    // Backward, last layer first; gradient blocks are assembled in forward order.
    let mut blocks: Vec<Vec<f64>> = vec![Vec::new(); net.layers().len()];
    for (li, layer) in net.layers().iter().enumerate().rev() {
        let ubar = match layer.activation {
            Activation::Tanh => tanh_backward(&pre[li], &zbar, layout, m),
            Activation::Identity => zbar,
        };
        let dw = ubar.dot(&inputs[li].t());
        let db = ubar.slice(s![.., 0..m]).sum_axis(Axis(1));
        let mut block = Vec::with_capacity(dw.len() + db.len());
        block.extend(dw.iter());
        block.extend(db.iter());
        blocks[li] = block;
        zbar = if li > 0 {
            layer.weight.t().dot(&ubar)
        } else {
            Array2::zeros((0, 0))
        };
    }
    Ok((total, blocks.concat()))
}

fn tanh_forward(u: &Array2<f64>, layout: JetLayout, m: usize) -> Array2<f64> {
    let mut z = Array2::zeros(u.raw_dim());
    let vars = if layout.order >= 1 { layout.vars } else { 0 };
    for (urow, mut zrow) in u.outer_iter().zip(z.outer_iter_mut()) {
        let us = urow.as_slice().expect("standard layout");
        let zs = zrow.as_slice_mut().expect("standard layout");
        for i in 0..m {
            let t = us[i].tanh();
            let t1 = 1.0 - t * t;
            let t2 = -2.0 * t * t1;
            zs[i] = t;
            for a in 0..vars {
                zs[layout.grad(a) * m + i] = t1 * us[layout.grad(a) * m + i];
            }
            if layout.order >= 2 {
                for b in 0..vars {
                    let ub = us[layout.grad(b) * m + i];
                    for a in 0..=b {
                        let ua = us[layout.grad(a) * m + i];
                        let h = layout.hess(a, b) * m + i;
                        zs[h] = t2 * ua * ub + t1 * us[h];
                    }
                }
            }
        }
    }
    z
}

fn tanh_backward(u: &Array2<f64>, zbar: &Array2<f64>, layout: JetLayout, m: usize) -> Array2<f64> {
    let mut ubar = Array2::zeros(u.raw_dim());
    let vars = if layout.order >= 1 { layout.vars } else { 0 };
    for ((urow, zrow), mut brow) in u
        .outer_iter()
        .zip(zbar.outer_iter())
        .zip(ubar.outer_iter_mut())
    {
        let us = urow.as_slice().expect("standard layout");
        let zs = zrow.as_slice().expect("standard layout");
        let bs = brow.as_slice_mut().expect("standard layout");
        for i in 0..m {
            let t = us[i].tanh();
            let t1 = 1.0 - t * t;
            let t2 = -2.0 * t * t1;
            let t3 = -2.0 * (t1 * t1 + t * t2);
            let mut b0 = t1 * zs[i];
            for a in 0..vars {
                let ga = layout.grad(a) * m + i;
                b0 += t2 * zs[ga] * us[ga];
                bs[ga] = t1 * zs[ga];
            }
            if layout.order >= 2 {
                for b in 0..vars {
                    let gb = layout.grad(b) * m + i;
                    for a in 0..=b {
                        let ga = layout.grad(a) * m + i;
                        let h = layout.hess(a, b) * m + i;
                        let zh = zs[h];
                        b0 += zh * (t3 * us[ga] * us[gb] + t2 * us[h]);
                        bs[h] = t1 * zh;
                        if a == b {
                            bs[ga] += zh * t2 * 2.0 * us[ga];
                        } else {
                            bs[ga] += zh * t2 * us[gb];
                            bs[gb] += zh * t2 * us[ga];
                        }
                    }
                }
            }
            bs[i] = b0;
        }
    }
    ubar
}
