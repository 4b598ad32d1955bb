//! The full regressor: embedding → re-uploading circuit → readout, plus the
//! two baselines sharing its parts, the boundary-vanishing PDE surrogate and
//! finite-difference input derivatives.

use std::f64::consts::PI;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::{AnsatzParams, Topology};
use crate::classical::{EmbedCache, EmbedNet, Readout, DEFAULT_PARAM_BUDGET};
use crate::error::{Error, Result};
use crate::qsim::Backend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// Embedding, circuit and residual readout.
    Hybrid,
    /// Circuit fed directly with rescaled raw inputs; `ŷ = w_q·y_q + b`.
    PureQnn,
    /// Embedding and readout only; the circuit is never run.
    ClassicalMlp,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] = [ModelVariant::Hybrid, ModelVariant::PureQnn, ModelVariant::ClassicalMlp];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Hybrid => "hybrid",
            ModelVariant::PureQnn => "pure_qnn",
            ModelVariant::ClassicalMlp => "classical_mlp",
        }
    }

    pub fn uses_circuit(self) -> bool {
        self != ModelVariant::ClassicalMlp
    }

    pub fn uses_embedding(self) -> bool {
        self != ModelVariant::PureQnn
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown model variant `{s}`")))
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Fixed raw-input angle encoding for the pure circuit baseline: each feature
/// is z-scored and multiplied by `scale` (π/3 maps ±3σ to ±π).
///
/// With `d ≤ n_qubits` feature `j` drives qubit `j` in every layer and extra
/// qubits get 0. With `d > n_qubits`, layer `l` qubit `j` receives feature
/// `(l·n_qubits + j) mod d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEncoding {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub scale: f64,
}

impl RawEncoding {
    pub const DEFAULT_SCALE: f64 = PI / 3.0;

    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim], scale: 1.0 }
    }

    /// Per-feature statistics of `xs` (population std; zero spread maps to 1).
    pub fn fit(xs: &[Vec<f64>]) -> Result<Self> {
        let first = xs.first().ok_or(Error::Empty("encoding inputs"))?;
        let d = first.len();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in xs {
            if x.len() != d {
                return Err(Error::Dimension { what: "encoding input", expected: d, got: x.len() });
            }
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
        }
        let mut std = vec![0.0; d];
        for x in xs {
            std.iter_mut().zip(x).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
        }
        std.iter_mut().for_each(|s| *s = if *s > 0.0 { s.sqrt() } else { 1.0 });
        Ok(Self { mean, std, scale: Self::DEFAULT_SCALE })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn feature_for(&self, layer: usize, qubit: usize, n_qubits: usize) -> Option<usize> {
        let d = self.dim();
        if d <= n_qubits {
            (qubit < d).then_some(qubit)
        } else {
            Some((layer * n_qubits + qubit) % d)
        }
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| self.scale * (v - m) / s)
            .collect()
    }
}

/// Sizes used to build a fresh model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub n_qubits: usize,
    pub hidden: Vec<usize>,
    pub topology: Topology,
    pub param_budget: usize,
}

impl ModelShape {
    pub fn new(input_dim: usize, n_qubits: usize) -> Self {
        Self {
            input_dim,
            n_qubits,
            hidden: vec![32, 16],
            topology: Topology::default_for(n_qubits),
            param_budget: DEFAULT_PARAM_BUDGET,
        }
    }

    pub fn embed_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(self.n_qubits);
        sizes
    }
}

/// Positions of each parameter block inside the flat trainable vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    pub classical: Range<usize>,
    pub quantum: Range<usize>,
    pub readout: Range<usize>,
}

impl IndexMap {
    pub fn len(&self) -> usize {
        self.readout.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All trainable parameters of one model plus its variant and encoding.
///
/// The flat view concatenates `θ_c` (embedding), `θ_q` (circuit) and the
/// trainable readout entries: `[w_z…, w_q, b]` for the hybrid, `[w_q, b]`
/// for the pure circuit and `[w_z…, b]` for the classical baseline, whose
/// `w_q` stays frozen at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridParams {
    pub variant: ModelVariant,
    pub embed: Option<EmbedNet>,
    pub ansatz: Option<AnsatzParams>,
    pub readout: Readout,
    pub encoding: Option<RawEncoding>,
}

/// Everything a forward pass produced that the backward pass reuses.
#[derive(Debug, Clone)]
pub struct Forward {
    pub embed: Option<EmbedCache>,
    /// Per-(layer, qubit) circuit input, layer-major.
    pub circuit_inputs: Vec<f64>,
    pub y_q: f64,
    pub prediction: f64,
}

impl Forward {
    pub fn latent(&self) -> &[f64] {
        self.embed.as_ref().map(EmbedCache::output).unwrap_or(&[])
    }
}

impl HybridParams {
    pub fn init<R: Rng + ?Sized>(variant: ModelVariant, shape: &ModelShape, rng: &mut R) -> Result<Self> {
        let n = shape.n_qubits;
        let embed = match variant.uses_embedding() {
            true => Some(EmbedNet::xavier(&shape.embed_sizes(), shape.param_budget, rng)?),
            false => None,
        };
        let ansatz = match variant.uses_circuit() {
            true => Some(AnsatzParams::init_random(n, shape.topology, rng)?),
            false => None,
        };
        let readout = match variant {
            ModelVariant::Hybrid => Readout::xavier(n, rng),
            ModelVariant::PureQnn => Readout::xavier(0, rng),
            ModelVariant::ClassicalMlp => {
                let mut r = Readout::xavier(n, rng);
                *r.w.last_mut().expect("w_q slot") = 0.0;
                r
            }
        };
        let encoding = (variant == ModelVariant::PureQnn).then(|| RawEncoding::identity(shape.input_dim));
        let params = Self { variant, embed, ansatz, readout, encoding };
        params.validate()?;
        Ok(params)
    }

    pub fn with_encoding(mut self, encoding: RawEncoding) -> Self {
        self.encoding = Some(encoding);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let variant = self.variant.name();
        let bad = |reason| Err(Error::Variant { variant, reason });
        if self.variant.uses_embedding() != self.embed.is_some() {
            return bad("embedding presence does not match the variant");
        }
        if self.variant.uses_circuit() != self.ansatz.is_some() {
            return bad("circuit presence does not match the variant");
        }
        if self.readout.w.is_empty() {
            return bad("readout has no weights");
        }
        if let Some(a) = &self.ansatz {
            a.validate()?;
        }
        match self.variant {
            ModelVariant::Hybrid | ModelVariant::ClassicalMlp => {
                let embed = self.embed.as_ref().expect("checked above");
                embed.validate(usize::MAX)?;
                if self.readout.latent_dim() != embed.output_dim() {
                    return bad("readout width differs from latent dimension");
                }
                if let Some(a) = &self.ansatz {
                    if a.n_qubits != embed.output_dim() {
                        return bad("latent dimension must equal the qubit count");
                    }
                }
                if self.variant == ModelVariant::ClassicalMlp && self.readout.w_q() != 0.0 {
                    return bad("quantum readout weight must stay 0");
                }
            }
            ModelVariant::PureQnn => {
                if self.readout.latent_dim() != 0 {
                    return bad("pure circuit readout takes only y_q");
                }
                if self.encoding.is_none() {
                    return bad("raw input encoding missing");
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match (&self.embed, &self.encoding) {
            (Some(e), _) => e.input_dim(),
            (None, Some(enc)) => enc.dim(),
            (None, None) => 0,
        }
    }

    pub fn depth(&self) -> usize {
        self.ansatz.as_ref().map_or(0, |a| a.depth)
    }

    /// Gates per circuit execution (0 when no circuit is used).
    pub fn gate_count(&self) -> usize {
        self.ansatz.as_ref().map_or(0, AnsatzParams::gate_count)
    }

    pub fn index_map(&self) -> IndexMap {
        let c = self.embed.as_ref().map_or(0, EmbedNet::num_params);
        let q = self.ansatz.as_ref().map_or(0, AnsatzParams::num_params);
        let r = match self.variant {
            ModelVariant::Hybrid => self.readout.w.len() + 1,
            ModelVariant::PureQnn => 2,
            ModelVariant::ClassicalMlp => self.readout.latent_dim() + 1,
        };
        IndexMap { classical: 0..c, quantum: c..c + q, readout: c + q..c + q + r }
    }

    pub fn num_params(&self) -> usize {
        self.index_map().len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        if let Some(e) = &self.embed {
            out.extend(e.flatten());
        }
        if let Some(a) = &self.ansatz {
            out.extend(a.flatten());
        }
        match self.variant {
            ModelVariant::Hybrid => out.extend_from_slice(&self.readout.w),
            ModelVariant::PureQnn => out.push(self.readout.w_q()),
            ModelVariant::ClassicalMlp => out.extend_from_slice(self.readout.w_latent()),
        }
        out.push(self.readout.b);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let map = self.index_map();
        if flat.len() != map.len() {
            return Err(Error::Dimension { what: "flat parameter vector", expected: map.len(), got: flat.len() });
        }
        if let Some(e) = &mut self.embed {
            e.unflatten(&flat[map.classical.clone()])?;
        }
        if let Some(a) = &mut self.ansatz {
            a.unflatten(&flat[map.quantum.clone()])?;
        }
        let r = &flat[map.readout.clone()];
        let (weights, b) = r.split_at(r.len() - 1);
        match self.variant {
            ModelVariant::Hybrid => self.readout.w.copy_from_slice(weights),
            ModelVariant::PureQnn => self.readout.w[0] = weights[0],
            ModelVariant::ClassicalMlp => {
                let p = self.readout.latent_dim();
                self.readout.w[..p].copy_from_slice(weights);
            }
        }
        self.readout.b = b[0];
        Ok(())
    }

    /// Copy with the flat vector replaced.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat(flat)?;
        Ok(p)
    }

    /// Circuit inputs for each (layer, qubit), layer-major.
    fn circuit_inputs(&self, x: &[f64], latent: &[f64]) -> Result<Vec<f64>> {
        let a = self.ansatz.as_ref().expect("circuit variant");
        let n = a.n_qubits;
        match self.variant {
            ModelVariant::PureQnn => {
                let enc = self.encoding.as_ref().expect("validated encoding");
                let e = enc.encode(x);
                let mut out = Vec::with_capacity(a.depth * n);
                for l in 0..a.depth {
                    out.extend((0..n).map(|j| enc.feature_for(l, j, n).map_or(0.0, |f| e[f])));
                }
                Ok(out)
            }
            _ => {
                if latent.len() != n {
                    return Err(Error::Dimension { what: "latent vector", expected: n, got: latent.len() });
                }
                Ok(latent.iter().copied().cycle().take(a.depth * n).collect())
            }
        }
    }

    pub fn forward(&self, x: &[f64], backend: &Backend) -> Result<Forward> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension { what: "model input", expected: self.input_dim(), got: x.len() });
        }
        let embed = self.embed.as_ref().map(|e| e.forward(x)).transpose()?;
        let latent = embed.as_ref().map(EmbedCache::output).unwrap_or(&[]);
        let (circuit_inputs, y_q) = match &self.ansatz {
            Some(a) if self.variant.uses_circuit() => {
                let inputs = self.circuit_inputs(x, latent)?;
                let angles = a.angles_with(|l, j| inputs[l * a.n_qubits + j]);
                let y = a.feature_from_angles(&angles, backend)?;
                (inputs, y)
            }
            _ => (Vec::new(), 0.0),
        };
        let prediction = self.readout.forward(latent, y_q)?;
        Ok(Forward { embed, circuit_inputs, y_q, prediction })
    }

    pub fn predict(&self, x: &[f64], backend: &Backend) -> Result<f64> {
        Ok(self.forward(x, backend)?.prediction)
    }

    /// Hard-constrained PDE surrogate `û(x) = ŷ(x)·∏(1 − x_i²)` on `[-1, 1]^d`.
    pub fn predict_pde(&self, x: &[f64], backend: &Backend) -> Result<f64> {
        check_domain(x)?;
        Ok(self.predict(x, backend)? * boundary_factor(x))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

pub fn predict(x: &[f64], params: &HybridParams, backend: &Backend) -> Result<f64> {
    params.predict(x, backend)
}

pub fn predict_pde(x: &[f64], params: &HybridParams, backend: &Backend) -> Result<f64> {
    params.predict_pde(x, backend)
}

/// `∏(1 − x_i²)`, zero on every face of the cube.
pub fn boundary_factor(x: &[f64]) -> f64 {
    x.iter().map(|v| 1.0 - v * v).product()
}

pub fn check_domain(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| (-1.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(Error::OutsideDomain(x.to_vec()))
    }
}

pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// Value, gradient and Laplacian at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDerivatives {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub laplacian: f64,
}

/// Central-difference stencil: the point itself, then `x ± h e_i` for each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub dim: usize,
    pub h: f64,
}

impl Stencil {
    pub fn new(dim: usize, h: f64) -> Self {
        Self { dim, h }
    }

    pub fn len(&self) -> usize {
        2 * self.dim + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Points must stay at least `2h` from every face.
    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension { what: "stencil point", expected: self.dim, got: x.len() });
        }
        let margin = 2.0 * self.h;
        if x.iter().any(|v| 1.0 - v.abs() < margin) {
            return Err(Error::Stencil { point: x.to_vec(), margin });
        }
        Ok(())
    }

    /// `[x, x+he_0, x−he_0, x+he_1, x−he_1, …]`
    pub fn points(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pts = Vec::with_capacity(self.len());
        pts.push(x.to_vec());
        for i in 0..self.dim {
            for sign in [1.0, -1.0] {
                let mut p = x.to_vec();
                p[i] += sign * self.h;
                pts.push(p);
            }
        }
        pts
    }

    pub fn derivatives(&self, values: &[f64]) -> LocalDerivatives {
        let (h, c) = (self.h, values[0]);
        let mut gradient = Vec::with_capacity(self.dim);
        let mut laplacian = 0.0;
        for i in 0..self.dim {
            let (p, m) = (values[1 + 2 * i], values[2 + 2 * i]);
            gradient.push((p - m) / (2.0 * h));
            laplacian += (p - 2.0 * c + m) / (h * h);
        }
        LocalDerivatives { value: c, gradient, laplacian }
    }

    /// Transpose of [`Stencil::derivatives`]: maps sensitivities to the value,
    /// gradient and Laplacian back onto the stencil values.
    pub fn pullback(&self, d_value: f64, d_gradient: &[f64], d_laplacian: f64) -> Vec<f64> {
        let h = self.h;
        let mut out = vec![0.0; self.len()];
        out[0] = d_value - 2.0 * self.dim as f64 * d_laplacian / (h * h);
        for i in 0..self.dim {
            let g = d_gradient.get(i).copied().unwrap_or(0.0) / (2.0 * h);
            out[1 + 2 * i] = g + d_laplacian / (h * h);
            out[2 + 2 * i] = -g + d_laplacian / (h * h);
        }
        out
    }
}

/// Which input derivative to return.
#[derive(Debug, Clone, PartialEq)]
pub enum DerivativeOrder {
    Gradient,
    Laplacian,
    Directional(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DerivativeValue {
    Gradient(Vec<f64>),
    Laplacian(f64),
    Directional(f64),
}

/// Central finite differences of any scalar field at `x`.
pub fn field_derivatives(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<LocalDerivatives> {
    let stencil = Stencil::new(x.len(), h);
    stencil.check(x)?;
    let values = stencil.points(x).iter().map(|p| f(p)).collect::<Result<Vec<_>>>()?;
    Ok(stencil.derivatives(&values))
}

/// Derivatives of the hard-constrained surrogate with respect to its input.
pub fn input_derivatives(
    x: &[f64],
    params: &HybridParams,
    backend: &Backend,
    order: &DerivativeOrder,
    h: f64,
) -> Result<DerivativeValue> {
    let local = field_derivatives(|p| params.predict_pde(p, backend), x, h)?;
    Ok(match order {
        DerivativeOrder::Gradient => DerivativeValue::Gradient(local.gradient),
        DerivativeOrder::Laplacian => DerivativeValue::Laplacian(local.laplacian),
        DerivativeOrder::Directional(v) => {
            if v.len() != x.len() {
                return Err(Error::Dimension { what: "direction", expected: x.len(), got: v.len() });
            }
            DerivativeValue::Directional(v.iter().zip(&local.gradient).map(|(a, b)| a * b).sum())
        }
    })
}
