//! Sequential dense networks with exact reverse-mode gradients.
//!
//! Every network in the crate (score/vector-field bodies, the time-embedding
//! MLP, encoder, decoder, discriminator) is a [`DenseNet`]: a chain of affine
//! layers, each followed by an elementwise [`Activation`]. Inputs carry one
//! sample per row.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    LeakyRelu,
    Mish,
    Tanh,
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Mish => x * softplus(x).tanh(),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative at pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Mish => {
                let t = softplus(x).tanh();
                t + x * (1.0 - t * t) * sigmoid(x)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Shape-only description of a network; enough to rebuild it from a flat parameter blob.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    /// `(output width, activation)` per layer.
    pub layers: Vec<(usize, Activation)>,
}

impl NetSpec {
    /// `hidden` layers of `width` with `hidden_act`, then a linear output layer.
    pub fn mlp(
        input_dim: usize,
        width: usize,
        hidden: usize,
        output_dim: usize,
        hidden_act: Activation,
    ) -> Self {
        let mut layers = vec![(width, hidden_act); hidden];
        layers.push((output_dim, Activation::Identity));
        NetSpec { input_dim, layers }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.0).unwrap_or(self.input_dim)
    }

    pub fn param_count(&self) -> usize {
        let mut fan_in = self.input_dim;
        let mut n = 0;
        for &(out, _) in &self.layers {
            n += fan_in * out + out;
            fan_in = out;
        }
        n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`
    pub weight: Tensor2,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// Input of every layer.
    inputs: Vec<Tensor2>,
    /// Pre-activation of every layer.
    pre: Vec<Tensor2>,
    output: Tensor2,
}

impl Trace {
    pub fn output(&self) -> &Tensor2 {
        &self.output
    }

    pub fn into_output(self) -> Tensor2 {
        self.output
    }

    /// Post-activation output of layer `i`.
    pub fn layer_output(&self, i: usize) -> &Tensor2 {
        if i + 1 < self.inputs.len() {
            &self.inputs[i + 1]
        } else {
            &self.output
        }
    }

    pub fn layer_count(&self) -> usize {
        self.pre.len()
    }
}

/// Gradients of a scalar loss w.r.t. every parameter and the network input.
#[derive(Clone, Debug, PartialEq)]
pub struct NetGrads {
    pub weights: Vec<Tensor2>,
    pub biases: Vec<Vec<f64>>,
    pub input: Tensor2,
}

impl NetGrads {
    /// Parameter gradients in the same slot order as [`DenseNet::param_slices_mut`].
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
            .collect()
    }

    pub fn accumulate(&mut self, other: &NetGrads) -> Result<()> {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.axpy(1.0, b)?;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

impl DenseNet {
    /// He-style Gaussian initialisation, biases zero.
    pub fn init<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Self {
        let mut fan_in = spec.input_dim;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for &(out, activation) in &spec.layers {
            let std = (2.0 / fan_in.max(1) as f64).sqrt()
                * if activation == Activation::Identity { 0.5 } else { 1.0 };
            let data = (0..fan_in * out)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            layers.push(Dense {
                weight: Tensor2::from_vec(fan_in, out, data).expect("sized above"),
                bias: vec![0.0; out],
                activation,
            });
            fan_in = out;
        }
        DenseNet { layers }
    }

    /// Builds a network from explicit layers, checking that widths chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].weight.cols() != pair[1].weight.rows() {
                return Err(Error::shape(
                    "DenseNet::from_layers",
                    format!("layer {} fan-in {}", i + 1, pair[0].weight.cols()),
                    pair[1].weight.rows(),
                ));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weight.cols() {
                return Err(Error::shape("DenseNet bias", l.weight.cols(), l.bias.len()));
            }
        }
        Ok(DenseNet { layers })
    }

    /// Rebuilds a network from its spec and a flat parameter vector
    /// (weights then bias, layer by layer).
    pub fn from_flat(spec: &NetSpec, params: &[f64]) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::shape(
                "DenseNet::from_flat",
                spec.param_count(),
                params.len(),
            ));
        }
        let mut fan_in = spec.input_dim;
        let mut offset = 0;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for &(out, activation) in &spec.layers {
            let w = params[offset..offset + fan_in * out].to_vec();
            offset += fan_in * out;
            let b = params[offset..offset + out].to_vec();
            offset += out;
            layers.push(Dense {
                weight: Tensor2::from_vec(fan_in, out, w)?,
                bias: b,
                activation,
            });
            fan_in = out;
        }
        DenseNet::from_layers(layers)
    }

    pub fn spec(&self) -> NetSpec {
        NetSpec {
            input_dim: self.input_dim(),
            layers: self
                .layers
                .iter()
                .map(|l| (l.weight.cols(), l.activation))
                .collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Two slots per layer: weight, then bias.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    fn check_input(&self, input: &Tensor2) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape(
                "DenseNet input",
                format!("{} columns", self.input_dim()),
                input.cols(),
            ));
        }
        Ok(())
    }

    fn affine(layer: &Dense, x: &Tensor2) -> Result<Tensor2> {
        let mut z = x.matmul(&layer.weight)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        Ok(z)
    }

    pub fn forward(&self, input: &Tensor2) -> Result<Tensor2> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            let act = layer.activation;
            x = Self::affine(layer, &x)?.map(|v| act.apply(v));
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &Tensor2) -> Result<Trace> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let act = layer.activation;
            let z = Self::affine(layer, &x)?;
            let a = z.map(|v| act.apply(v));
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        Ok(Trace {
            inputs,
            pre,
            output: x,
        })
    }

    /// Gradients of `L` given `dL/d(output)`; recomputes the forward pass.
    pub fn backward(&self, input: &Tensor2, upstream: &Tensor2) -> Result<NetGrads> {
        let trace = self.forward_trace(input)?;
        self.backward_trace(&trace, upstream, &[])
    }

    /// Backward pass over a recorded trace.
    ///
    /// `taps[i]`, when present, is an extra gradient w.r.t. the post-activation
    /// output of layer `i` (used by losses on intermediate discriminator features).
    pub fn backward_trace(
        &self,
        trace: &Trace,
        upstream: &Tensor2,
        taps: &[Option<Tensor2>],
    ) -> Result<NetGrads> {
        upstream.ensure_same_shape("DenseNet backward upstream", trace.output())?;
        let n = self.layers.len();
        let mut weights = vec![Tensor2::zeros(0, 0); n];
        let mut biases = vec![Vec::new(); n];
        let mut grad = upstream.clone();
        for i in (0..n).rev() {
            if let Some(Some(tap)) = taps.get(i) {
                grad.axpy(1.0, tap)?;
            }
            let layer = &self.layers[i];
            let act = layer.activation;
            let dz = if act == Activation::Identity {
                grad
            } else {
                grad.zip_map(&trace.pre[i], |g, z| g * act.derivative(z))?
            };
            weights[i] = trace.inputs[i].t_matmul(&dz)?;
            biases[i] = dz.col_sums();
            grad = dz.matmul_t(&layer.weight)?;
        }
        Ok(NetGrads {
            weights,
            biases,
            input: grad,
        })
    }
}
