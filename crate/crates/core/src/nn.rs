//! Small fully-connected networks with tanh/identity activations and an Adam
//! optimiser.
//!
//! Parameters flatten layer by layer: the weight matrix in row-major order
//! (`[out][in]`) followed by the bias vector.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::Jet;
use crate::error::{GeoError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// Shape `(outputs, inputs)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<Layer>,
}

impl MlpNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(GeoError::Shape("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(GeoError::Shape(format!(
                    "layer {i}: bias length {} does not match {} outputs",
                    l.bias.len(),
                    l.outputs()
                )));
            }
            if l.inputs() == 0 || l.outputs() == 0 {
                return Err(GeoError::Shape(format!(
                    "layer {i} has an empty weight matrix"
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(GeoError::Shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        Ok(MlpNetwork { layers })
    }

    /// Network with layer widths `sizes`, `hidden` activation on every layer
    /// but the last, and weights and biases drawn uniformly from
    /// `±1/sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output widths");
        let count = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..bound));
                let bias = Array1::from_shape_fn(fan_out, |_| rng.gen_range(-bound..bound));
                let activation = if i + 1 == count { output } else { hidden };
                Layer {
                    weight,
                    bias,
                    activation,
                }
            })
            .collect();
        MlpNetwork { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(GeoError::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = *it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "input dimension mismatch");
        let mut a = Array1::from_vec(x.to_vec());
        for l in &self.layers {
            let mut z = l.weight.dot(&a) + &l.bias;
            if l.activation == Activation::Tanh {
                z.mapv_inplace(f64::tanh);
            }
            a = z;
        }
        a.to_vec()
    }

    /// Forward pass carrying jets through every layer.
    pub fn forward_jets(&self, x: &[Jet]) -> Vec<Jet> {
        assert_eq!(x.len(), self.input_dim(), "input dimension mismatch");
        let mut a: Vec<Jet> = x.to_vec();
        for l in &self.layers {
            let mut next = Vec::with_capacity(l.outputs());
            for (row, &b) in l.weight.outer_iter().zip(l.bias.iter()) {
                let mut acc = Jet::constant(b);
                for (w, xj) in row.iter().zip(&a) {
                    acc.axpy(*w, xj);
                }
                next.push(match l.activation {
                    Activation::Tanh => acc.tanh(),
                    Activation::Identity => acc,
                });
            }
            a = next;
        }
        a
    }
}

/// Adam with the usual bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
