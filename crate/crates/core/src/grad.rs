//! Gradients: parameter-shift for the circuit, reverse mode for the
//! embedding, SPSA, the quantum Fisher metric and natural-gradient solve,
//! clipping, and finite-difference checks.

use std::f64::consts::FRAC_PI_2;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{AnsatzParams, LatentVector};
use crate::error::{Error, Result};
use crate::hybrid::{Forward, HybridParams, ModelVariant};
use crate::qsim::Backend;
use crate::tasks::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Shift,
    Spsa,
    Backprop,
}

/// Gradient aligned to the flat parameter view plus its evaluation cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradVector {
    pub values: Vec<f64>,
    pub estimator: Estimator,
    pub circuit_evals: u64,
    pub shots_used: u64,
}

impl GradVector {
    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Derivatives of `y_q` with respect to the circuit parameters (flat ansatz
/// order) and, when the inputs are shared across layers, the latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct YqGradient {
    pub theta: Vec<f64>,
    pub z: Vec<f64>,
}

/// Parameter-shift derivatives of `y_q` for per-(layer, qubit) inputs.
///
/// Each `φ` and `β` entry is shifted on its own, two executions apply.
/// `z` derivatives reuse the `β` shifts: `∂y_q/∂z_j = Σ_l φ_lj·∂y_q/∂β_lj`.
pub fn shift_gradient_layered(inputs: &[f64], params: &AnsatzParams, backend: &Backend) -> Result<YqGradient> {
    let n = params.n_qubits;
    let count = params.depth * n;
    if inputs.len() != count {
        return Err(Error::Dimension { what: "circuit inputs", expected: count, got: inputs.len() });
    }
    let mut angles = params.angles_with(|l, j| inputs[l * n + j]);
    let mut shifted = |a: usize| -> Result<f64> {
        let base = angles[a];
        angles[a] = base + FRAC_PI_2;
        let plus = params.feature_from_angles(&angles, backend)?;
        angles[a] = base - FRAC_PI_2;
        let minus = params.feature_from_angles(&angles, backend)?;
        angles[a] = base;
        Ok(0.5 * (plus - minus))
    };
    let mut theta = vec![0.0; params.num_params()];
    let mut z = vec![0.0; n];
    for l in 0..params.depth {
        for j in 0..n {
            let a = l * n + j;
            theta[params.phi_index(l, j)] = inputs[a] * shifted(a)?;
        }
        for j in 0..n {
            let a = l * n + j;
            let d = shifted(a)?;
            theta[params.beta_index(l, j)] = d;
            z[j] += params.phi[l][j] * d;
        }
    }
    Ok(YqGradient { theta, z })
}

/// Parameter-shift derivatives when every layer re-uploads `z`.
pub fn shift_gradient_yq(z: &LatentVector, params: &AnsatzParams, backend: &Backend) -> Result<YqGradient> {
    if z.0.len() != params.n_qubits {
        return Err(Error::Dimension { what: "latent vector", expected: params.n_qubits, got: z.0.len() });
    }
    let inputs: Vec<f64> = z.0.iter().copied().cycle().take(params.depth * params.n_qubits).collect();
    shift_gradient_layered(&inputs, params, backend)
}

/// Evaluates `f(0..n)` in parallel in exact mode, sequentially with shots so
/// the sampler stream stays reproducible. Output order is index order.
fn map_indices<T: Send>(backend: &Backend, n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if backend.is_exact() {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

pub fn forward_all(model: &HybridParams, points: &[Vec<f64>], backend: &Backend) -> Result<Vec<Forward>> {
    map_indices(backend, points.len(), |i| model.forward(&points[i], backend))
}

pub fn predictions(model: &HybridParams, points: &[Vec<f64>], backend: &Backend) -> Result<Vec<f64>> {
    map_indices(backend, points.len(), |i| model.predict(&points[i], backend))
}

pub fn evaluate_loss(model: &HybridParams, objective: &Objective, backend: &Backend) -> Result<f64> {
    objective.loss(&predictions(model, objective.eval_points(), backend)?)
}

/// Adds `upstream · ∂ŷ/∂θ` for one point into `out` (flat order).
fn accumulate_sample(model: &HybridParams, fwd: &Forward, upstream: f64, backend: &Backend, out: &mut [f64]) -> Result<()> {
    let map = model.index_map();
    let yq = match (&model.ansatz, model.variant.uses_circuit()) {
        (Some(a), true) => {
            let g = shift_gradient_layered(&fwd.circuit_inputs, a, backend)?;
            let scale = upstream * model.readout.w_q();
            out[map.quantum.clone()].iter_mut().zip(&g.theta).for_each(|(o, d)| *o += scale * d);
            Some(g)
        }
        _ => None,
    };
    if let (Some(embed), Some(cache)) = (&model.embed, &fwd.embed) {
        let wq = model.readout.w_q();
        let grad_z: Vec<f64> = match &yq {
            Some(g) => model.readout.w_latent().iter().zip(&g.z).map(|(w, d)| w + wq * d).collect(),
            None => model.readout.w_latent().to_vec(),
        };
        embed.backward(cache, &grad_z, upstream, &mut out[map.classical.clone()])?;
    }
    let r = &mut out[map.readout.clone()];
    let latent = fwd.latent();
    let (b, weights) = r.split_last_mut().expect("bias slot");
    *b += upstream;
    match model.variant {
        ModelVariant::Hybrid => {
            weights.iter_mut().zip(latent.iter().chain([&fwd.y_q])).for_each(|(g, v)| *g += upstream * v);
        }
        ModelVariant::PureQnn => weights[0] += upstream * fwd.y_q,
        ModelVariant::ClassicalMlp => weights.iter_mut().zip(latent).for_each(|(g, v)| *g += upstream * v),
    }
    Ok(())
}

const CHUNK: usize = 16;

/// Loss and its full gradient: parameter-shift for the circuit, reverse mode
/// through the embedding (including the `z → y_q` path), closed form for the
/// readout. Per-point contributions are summed in a fixed chunk order so the
/// result does not depend on thread scheduling.
pub fn loss_gradient(model: &HybridParams, objective: &Objective, backend: &Backend) -> Result<(f64, GradVector)> {
    let points = objective.eval_points();
    if points.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let (evals0, shots0) = (backend.executions(), backend.shots_used());
    let forwards = forward_all(model, points, backend)?;
    let raw: Vec<f64> = forwards.iter().map(|f| f.prediction).collect();
    let (loss, upstream) = objective.loss_and_upstream(&raw)?;
    let p = model.num_params();
    let chunks = points.len().div_ceil(CHUNK);
    let partial = map_indices(backend, chunks, |c| {
        let mut acc = vec![0.0; p];
        for i in c * CHUNK..((c + 1) * CHUNK).min(points.len()) {
            accumulate_sample(model, &forwards[i], upstream[i], backend, &mut acc)?;
        }
        Ok(acc)
    })?;
    let mut values = vec![0.0; p];
    for acc in &partial {
        values.iter_mut().zip(acc).for_each(|(v, a)| *v += a);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let estimator = if model.variant.uses_circuit() { Estimator::Shift } else { Estimator::Backprop };
    Ok((
        loss,
        GradVector {
            values,
            estimator,
            circuit_evals: backend.executions() - evals0,
            shots_used: backend.shots_used() - shots0,
        },
    ))
}

/// SPSA result with the draw that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpsaEstimate {
    pub gradient: Vec<f64>,
    pub delta: Vec<f64>,
    pub loss_plus: f64,
    pub loss_minus: f64,
}

/// `[(L(θ+cΔ) − L(θ−cΔ))/(2c)]·Δ` for a given sign vector (zeros allowed to
/// freeze coordinates). Exactly two loss evaluations.
pub fn spsa_with_delta(
    mut loss_fn: impl FnMut(&[f64]) -> Result<f64>,
    theta: &[f64],
    c: f64,
    delta: Vec<f64>,
) -> Result<SpsaEstimate> {
    if c <= 0.0 || c.is_nan() {
        return Err(Error::Invalid(format!("SPSA perturbation must be positive, got {c}")));
    }
    if delta.len() != theta.len() {
        return Err(Error::Dimension { what: "perturbation", expected: theta.len(), got: delta.len() });
    }
    let shifted = |s: f64| -> Vec<f64> { theta.iter().zip(&delta).map(|(t, d)| t + s * c * d).collect() };
    let loss_plus = loss_fn(&shifted(1.0))?;
    let loss_minus = loss_fn(&shifted(-1.0))?;
    if !loss_plus.is_finite() || !loss_minus.is_finite() {
        return Err(Error::NonFinite("SPSA loss"));
    }
    let slope = (loss_plus - loss_minus) / (2.0 * c);
    let gradient = delta.iter().map(|d| slope * d).collect();
    Ok(SpsaEstimate { gradient, delta, loss_plus, loss_minus })
}

/// SPSA with Rademacher `Δ` drawn over `active` (other coordinates get 0).
pub fn spsa_estimate<R: Rng + ?Sized>(
    loss_fn: impl FnMut(&[f64]) -> Result<f64>,
    theta: &[f64],
    c: f64,
    active: Option<Range<usize>>,
    rng: &mut R,
) -> Result<SpsaEstimate> {
    let active = active.unwrap_or(0..theta.len());
    let delta = (0..theta.len())
        .map(|i| if active.contains(&i) { if rng.gen::<bool>() { 1.0 } else { -1.0 } } else { 0.0 })
        .collect();
    spsa_with_delta(loss_fn, theta, c, delta)
}

/// Regularized quantum Fisher information over the circuit parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Qfim {
    pub matrix: DMatrix<f64>,
    pub lambda: f64,
}

pub const DEFAULT_QNG_LAMBDA: f64 = 1e-3;
pub const DEFAULT_CLIP: f64 = 1.0;

/// `F_ij = 4·Re[⟨∂_iψ|∂_jψ⟩ − ⟨∂_iψ|ψ⟩⟨ψ|∂_jψ⟩]` for per-(layer, qubit) inputs.
///
/// Derivative states come from shifted statevectors,
/// `|∂ψ⟩ = (|ψ(a+π/2)⟩ − |ψ(a−π/2)⟩)/(2√2)` per rotation angle `a`, times the
/// input for `φ` entries.
pub fn qfim_layered(inputs: &[f64], params: &AnsatzParams, backend: &Backend) -> Result<DMatrix<f64>> {
    if !backend.is_exact() {
        return Err(Error::QfimNeedsExact);
    }
    let n = params.n_qubits;
    if inputs.len() != params.depth * n {
        return Err(Error::Dimension { what: "circuit inputs", expected: params.depth * n, got: inputs.len() });
    }
    let mut angles = params.angles_with(|l, j| inputs[l * n + j]);
    let psi = backend.prepare(n, &params.gates_from_angles(&angles))?;
    let norm = 1.0 / (2.0 * std::f64::consts::SQRT_2);
    let p = params.num_params();
    let mut derivs: Vec<Vec<Complex64>> = vec![Vec::new(); p];
    for l in 0..params.depth {
        for j in 0..n {
            let a = l * n + j;
            let base = angles[a];
            angles[a] = base + FRAC_PI_2;
            let plus = backend.prepare(n, &params.gates_from_angles(&angles))?;
            angles[a] = base - FRAC_PI_2;
            let minus = backend.prepare(n, &params.gates_from_angles(&angles))?;
            angles[a] = base;
            let d: Vec<Complex64> =
                plus.amplitudes().iter().zip(minus.amplitudes()).map(|(x, y)| (x - y) * norm).collect();
            derivs[params.phi_index(l, j)] = d.iter().map(|v| v * inputs[a]).collect();
            derivs[params.beta_index(l, j)] = d;
        }
    }
    let inner = |a: &[Complex64], b: &[Complex64]| -> Complex64 { a.iter().zip(b).map(|(x, y)| x.conj() * y).sum() };
    let overlaps: Vec<Complex64> = derivs.iter().map(|d| inner(psi.amplitudes(), d)).collect();
    let mut f = DMatrix::zeros(p, p);
    for i in 0..p {
        for k in i..p {
            let v = 4.0 * (inner(&derivs[i], &derivs[k]) - overlaps[i].conj() * overlaps[k]).re;
            f[(i, k)] = v;
            f[(k, i)] = v;
        }
    }
    Ok(f)
}

pub fn qfim(z: &LatentVector, params: &AnsatzParams, backend: &Backend) -> Result<DMatrix<f64>> {
    let inputs: Vec<f64> = z.0.iter().copied().cycle().take(params.depth * params.n_qubits).collect();
    if z.0.len() != params.n_qubits {
        return Err(Error::Dimension { what: "latent vector", expected: params.n_qubits, got: z.0.len() });
    }
    qfim_layered(&inputs, params, backend)
}

/// Metric averaged over the circuit inputs produced by `points`.
pub fn model_qfim(model: &HybridParams, points: &[Vec<f64>], backend: &Backend, lambda: f64) -> Result<Qfim> {
    let a = model.ansatz.as_ref().ok_or(Error::Variant { variant: model.variant.name(), reason: "no circuit" })?;
    if points.is_empty() {
        return Err(Error::Empty("QFIM batch"));
    }
    let per_point = map_indices(backend, points.len(), |i| {
        let fwd = model.forward(&points[i], backend)?;
        qfim_layered(&fwd.circuit_inputs, a, backend)
    })?;
    let mut matrix = DMatrix::zeros(a.num_params(), a.num_params());
    for f in &per_point {
        matrix += f;
    }
    matrix /= points.len() as f64;
    Ok(Qfim { matrix, lambda })
}

/// Solves `(F + λI)·d = g`.
pub fn qng_direction(g_q: &[f64], f: &DMatrix<f64>, lambda: f64) -> Result<Vec<f64>> {
    let p = g_q.len();
    if f.nrows() != p || f.ncols() != p {
        return Err(Error::Dimension { what: "metric", expected: p, got: f.nrows() });
    }
    let m = f + DMatrix::identity(p, p) * lambda;
    let g = DVector::from_column_slice(g_q);
    let d = m.cholesky().map(|c| c.solve(&g)).ok_or(Error::Solve(lambda))?;
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solve(lambda));
    }
    Ok(d.iter().copied().collect())
}

/// Rescales `g` onto the ball of radius `max_norm` when it lies outside.
pub fn clip_global_norm(g: &[f64], max_norm: f64) -> Result<Vec<f64>> {
    if max_norm <= 0.0 || max_norm.is_nan() {
        return Err(Error::Invalid(format!("clip norm must be positive, got {max_norm}")));
    }
    let norm = l2_norm(g);
    if norm > max_norm {
        let s = max_norm / norm;
        Ok(g.iter().map(|v| v * s).collect())
    } else {
        Ok(g.to_vec())
    }
}

/// Population variance across coordinates.
pub fn population_variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

pub const DEFAULT_VARIANCE_WINDOW: usize = 50;

/// Mean over the first `window` epochs of the across-coordinate variance.
pub fn grad_variance_proxy(history: &[Vec<f64>], window: usize) -> Result<f64> {
    if history.is_empty() || window == 0 {
        return Err(Error::Empty("gradient history"));
    }
    let used = &history[..history.len().min(window)];
    Ok(used.iter().map(|g| population_variance(g)).sum::<f64>() / used.len() as f64)
}

/// Central differences of the objective over the flat parameter vector.
pub fn finite_difference_gradient(model: &HybridParams, objective: &Objective, backend: &Backend, h: f64) -> Result<Vec<f64>> {
    let base = model.flatten();
    let p = base.len();
    let mut out = Vec::with_capacity(p);
    let mut probe = model.clone();
    for i in 0..p {
        let mut theta = base.clone();
        theta[i] = base[i] + h;
        probe.set_flat(&theta)?;
        let plus = evaluate_loss(&probe, objective, backend)?;
        theta[i] = base[i] - h;
        probe.set_flat(&theta)?;
        let minus = evaluate_loss(&probe, objective, backend)?;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// `|a − f| / max(|a|, |f|, floor)`
pub fn relative_error(analytic: f64, fd: f64, floor: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(floor)
}

pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordCheck {
    pub index: usize,
    pub block: String,
    pub analytic: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub block: String,
    pub params: usize,
    /// `None` when the block is empty for this variant.
    pub max_relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub blocks: Vec<BlockCheck>,
    pub coords: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.blocks.iter().filter_map(|b| b.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative_error() <= tol
    }
}

/// Per-coordinate and per-block comparison of two gradients.
pub fn compare_gradients(model: &HybridParams, analytic: &[f64], fd: &[f64], step: f64) -> GradCheckReport {
    let map = model.index_map();
    let named = [("classical", map.classical), ("quantum", map.quantum), ("readout", map.readout)];
    let mut coords = Vec::with_capacity(analytic.len());
    let mut blocks = Vec::new();
    for (name, range) in named {
        let mut worst: Option<f64> = None;
        for i in range.clone() {
            let e = relative_error(analytic[i], fd[i], RELATIVE_ERROR_FLOOR);
            worst = Some(worst.map_or(e, |w| w.max(e)));
            coords.push(CoordCheck {
                index: i,
                block: name.to_string(),
                analytic: analytic[i],
                finite_difference: fd[i],
                relative_error: e,
            });
        }
        blocks.push(BlockCheck { block: name.to_string(), params: range.len(), max_relative_error: worst });
    }
    GradCheckReport { step, blocks, coords }
}

pub fn gradient_check(model: &HybridParams, objective: &Objective, backend: &Backend, h: f64) -> Result<GradCheckReport> {
    let (_, g) = loss_gradient(model, objective, backend)?;
    let fd = finite_difference_gradient(model, objective, backend, h)?;
    Ok(compare_gradients(model, &g.values, &fd, h))
}
