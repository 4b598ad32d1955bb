//! Classical side of the regressor: the small tanh embedding network that
//! maps inputs to circuit angles, and the linear readout over `[z, y_q]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PARAM_BUDGET: usize = 2_000;

/// Dense layer, `weights` row-major `[out × in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b
        }));
    }
}

/// Embedding MLP `[d, h1, …, p]`: tanh on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedNet {
    pub sizes: Vec<usize>,
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass: `activations[k]` is the input to layer `k`,
/// the last entry is the output `z`.
#[derive(Debug, Clone)]
pub struct EmbedCache {
    pub activations: Vec<Vec<f64>>,
}

impl EmbedCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("non-empty cache")
    }
}

impl EmbedNet {
    pub fn zeros(sizes: &[usize], budget: usize) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Invalid(format!("embedding sizes {sizes:?} need ≥ 2 positive entries")));
        }
        let layers: Vec<Dense> = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        let count: usize = layers.iter().map(Dense::num_params).sum();
        if count > budget {
            return Err(Error::ParameterBudget { count, budget });
        }
        Ok(Self { sizes: sizes.to_vec(), layers })
    }

    /// Xavier-uniform weights `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn xavier<R: Rng + ?Sized>(sizes: &[usize], budget: usize, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, budget)?;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            layer.weights.iter_mut().for_each(|w| *w = rng.gen_range(-limit..=limit));
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated sizes")
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn validate(&self, budget: usize) -> Result<()> {
        if self.layers.len() + 1 != self.sizes.len() {
            return Err(Error::Dimension { what: "embedding layers", expected: self.sizes.len() - 1, got: self.layers.len() });
        }
        for (layer, w) in self.layers.iter().zip(self.sizes.windows(2)) {
            if layer.inputs != w[0] || layer.outputs != w[1] {
                return Err(Error::Invalid("embedding layer shape disagrees with sizes".into()));
            }
            if layer.weights.len() != w[0] * w[1] || layer.bias.len() != w[1] {
                return Err(Error::Dimension { what: "embedding weights", expected: w[0] * w[1], got: layer.weights.len() });
            }
        }
        let count = self.num_params();
        if count > budget {
            return Err(Error::ParameterBudget { count, budget });
        }
        Ok(())
    }

    /// Flat order: per layer, weights row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension { what: "embedding flat vector", expected: self.num_params(), got: flat.len() });
        }
        let mut rest = flat;
        for layer in &mut self.layers {
            let (w, tail) = rest.split_at(layer.weights.len());
            let (b, tail) = tail.split_at(layer.bias.len());
            layer.weights.copy_from_slice(w);
            layer.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<EmbedCache> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension { what: "embedding input", expected: self.input_dim(), got: x.len() });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward(&activations[k], &mut out);
            if k < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(out);
        }
        Ok(EmbedCache { activations })
    }

    /// Accumulates `scale · ∂(grad_z · z)/∂θ_c` into `out` (flat order).
    pub fn backward(&self, cache: &EmbedCache, grad_z: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::Invalid("forward cache does not match network".into()));
        }
        if grad_z.len() != self.output_dim() {
            return Err(Error::Dimension { what: "latent gradient", expected: self.output_dim(), got: grad_z.len() });
        }
        if out.len() != self.num_params() {
            return Err(Error::Dimension { what: "embedding gradient", expected: self.num_params(), got: out.len() });
        }
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let start = *acc;
                *acc += l.num_params();
                Some(start)
            })
            .collect();
        let mut delta: Vec<f64> = grad_z.iter().map(|g| g * scale).collect();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &cache.activations[k];
            let base = offsets[k];
            let (gw, gb) = out[base..base + layer.num_params()].split_at_mut(layer.weights.len());
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, &a) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if k > 0 {
                // input of layer k is tanh output of layer k-1
                let mut prev = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    for (p, &w) in prev.iter_mut().zip(&layer.weights[o * layer.inputs..(o + 1) * layer.inputs]) {
                        *p += d * w;
                    }
                }
                for (p, &a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        Ok(())
    }
}

/// `ŷ = w^⊤[z, y_q] + b`; the last weight multiplies `y_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Readout {
    pub fn zeros(latent_dim: usize) -> Self {
        Self { w: vec![0.0; latent_dim + 1], b: 0.0 }
    }

    /// Uniform weights in `±√(6/(p+2))`, zero bias.
    pub fn xavier<R: Rng + ?Sized>(latent_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (latent_dim + 2) as f64).sqrt();
        Self { w: (0..=latent_dim).map(|_| rng.gen_range(-limit..=limit)).collect(), b: 0.0 }
    }

    pub fn latent_dim(&self) -> usize {
        self.w.len() - 1
    }

    pub fn w_latent(&self) -> &[f64] {
        &self.w[..self.w.len() - 1]
    }

    pub fn w_q(&self) -> f64 {
        *self.w.last().expect("readout has the quantum weight")
    }

    pub fn forward(&self, z: &[f64], y_q: f64) -> Result<f64> {
        if z.len() != self.latent_dim() {
            return Err(Error::Dimension { what: "readout input", expected: self.latent_dim(), got: z.len() });
        }
        Ok(self.w_latent().iter().zip(z).map(|(w, v)| w * v).sum::<f64>() + self.w_q() * y_q + self.b)
    }
}

pub fn embed_forward(x: &[f64], net: &EmbedNet) -> Result<EmbedCache> {
    net.forward(x)
}

pub fn readout_forward(z: &[f64], y_q: f64, r: &Readout) -> Result<f64> {
    r.forward(z, y_q)
}

/// Gradients of the classical parameters for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalGrads {
    pub embed: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
}

/// Reverse-mode gradients for one sample given `upstream = dL/dŷ`.
///
/// `dyq_dz` is the quantum feature's sensitivity to the latent vector, so the
/// embedding receives `dŷ/dz_j = w_j + w_q·dy_q/dz_j`.
pub fn backprop(
    net: &EmbedNet,
    readout: &Readout,
    cache: &EmbedCache,
    y_q: f64,
    upstream: f64,
    dyq_dz: &[f64],
) -> Result<ClassicalGrads> {
    let z = cache.output();
    if dyq_dz.len() != z.len() {
        return Err(Error::Dimension { what: "dy_q/dz", expected: z.len(), got: dyq_dz.len() });
    }
    let wq = readout.w_q();
    let grad_z: Vec<f64> = readout.w_latent().iter().zip(dyq_dz).map(|(w, d)| w + wq * d).collect();
    let mut embed = vec![0.0; net.num_params()];
    net.backward(cache, &grad_z, upstream, &mut embed)?;
    let mut w: Vec<f64> = z.iter().map(|v| upstream * v).collect();
    w.push(upstream * y_q);
    Ok(ClassicalGrads { embed, w, b: upstream })
}
