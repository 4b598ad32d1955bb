//! SPSA and Adam, and the depth curriculum: per depth a gradient-free SPSA
//! warm-up, then Adam until the training loss settles, then growth by one
//! identity-style layer.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{
    self, clip_global_norm, l2_norm, loss_gradient, population_variance, qng_direction, spsa_estimate,
    SpsaEstimate, DEFAULT_QNG_LAMBDA,
};
use crate::hybrid::{HybridParams, ModelVariant};
use crate::metrics::{self, convergence_check};
use crate::qsim::Backend;
use crate::tasks::{Objective, Validation};

/// `a_t = a/(t+1+A)^α`, `c_t = c/(t+1)^γ`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpsaSchedule {
    pub a: f64,
    pub c: f64,
    #[serde(rename = "A")]
    pub stability: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl SpsaSchedule {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if self.a < 0.0 || self.c <= 0.0 || self.stability < 0.0 || !unit(self.alpha) || !unit(self.gamma) {
            return Err(Error::Invalid(format!("invalid SPSA schedule {self:?}")));
        }
        Ok(())
    }

    pub fn a_t(&self, t: usize) -> f64 {
        self.a / (t as f64 + 1.0 + self.stability).powf(self.alpha)
    }

    pub fn c_t(&self, t: usize) -> f64 {
        self.c / (t as f64 + 1.0).powf(self.gamma)
    }
}

/// One SPSA update `θ' = θ − a_t·ĝ_t(θ)`.
pub fn spsa_step<R: Rng + ?Sized>(
    theta: &[f64],
    schedule: &SpsaSchedule,
    t: usize,
    loss_fn: impl FnMut(&[f64]) -> Result<f64>,
    active: Option<std::ops::Range<usize>>,
    rng: &mut R,
) -> Result<(Vec<f64>, SpsaEstimate)> {
    let est = spsa_estimate(loss_fn, theta, schedule.c_t(t), active, rng)?;
    let a = schedule.a_t(t);
    let next = theta.iter().zip(&est.gradient).map(|(x, g)| x - a * g).collect();
    Ok((next, est))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(dim: usize, config: AdamConfig) -> Self {
        Self { m: vec![0.0; dim], v: vec![0.0; dim], t: 0, config }
    }
}

/// Bias-corrected Adam update with step size `eta`.
pub fn adam_step(theta: &[f64], state: &mut AdamState, g: &[f64], eta: f64) -> Result<Vec<f64>> {
    if g.len() != theta.len() || state.m.len() != theta.len() {
        return Err(Error::Dimension { what: "Adam gradient", expected: theta.len(), got: g.len() });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Adam gradient"));
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        out.push(theta[i] - eta * m_hat / (v_hat.sqrt() + eps));
    }
    Ok(out)
}

/// SPSA constants. Unset `a` is calibrated from probe gradients so the first
/// step has norm `target_step·‖θ‖`; unset `A` becomes `0.1·T_spsa`. With
/// `cap_steps`, no step is allowed to exceed that length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsaConfig {
    pub a: Option<f64>,
    pub c: f64,
    #[serde(rename = "A")]
    pub stability: Option<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub target_step: f64,
    pub probes: usize,
    /// Perturb only the circuit parameters.
    pub quantum_only: bool,
    pub cap_steps: bool,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            a: None,
            c: 0.1,
            stability: None,
            alpha: 0.602,
            gamma: 0.101,
            target_step: 0.05,
            probes: 4,
            quantum_only: false,
            cap_steps: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub l_max: usize,
    pub t_spsa: usize,
    pub adam_max_iters: usize,
    pub adam_tol: f64,
    pub eta_coarse: f64,
    pub eta_fine: f64,
    pub qng: bool,
    pub qng_lambda: f64,
    /// Points used to average the metric (first `qng_batch` training inputs).
    pub qng_batch: usize,
    pub clip: Option<f64>,
    pub seed: u64,
    pub growth_init_scale: f64,
    pub spsa: SpsaConfig,
    pub adam: AdamConfig,
    pub variance_window: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            l_max: 2,
            t_spsa: 100,
            adam_max_iters: 400,
            adam_tol: 1e-4,
            eta_coarse: 1e-2,
            eta_fine: 1e-3,
            qng: false,
            qng_lambda: DEFAULT_QNG_LAMBDA,
            qng_batch: 16,
            clip: None,
            seed: 0,
            growth_init_scale: 0.0,
            spsa: SpsaConfig::default(),
            adam: AdamConfig::default(),
            variance_window: grad::DEFAULT_VARIANCE_WINDOW,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.l_max < 1 {
            return bad("l_max must be at least 1");
        }
        if self.l_max > crate::ansatz::MAX_DEPTH {
            return bad("l_max exceeds the supported circuit depth");
        }
        if !(self.adam_tol > 0.0) {
            return bad("adam_tol must be positive");
        }
        if !(self.eta_coarse > 0.0 && self.eta_fine > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.qng && !(self.qng_lambda >= 0.0) {
            return bad("qng_lambda must be non-negative");
        }
        if self.qng && self.qng_batch == 0 {
            return bad("qng_batch must be at least 1");
        }
        if matches!(self.clip, Some(c) if !(c > 0.0)) {
            return bad("clip must be positive");
        }
        if !(self.spsa.c > 0.0) || !(self.spsa.target_step > 0.0) || self.spsa.probes == 0 {
            return bad("SPSA c, target_step and probes must be positive");
        }
        if matches!(self.spsa.a, Some(a) if !(a >= 0.0)) {
            return bad("SPSA a must be non-negative");
        }
        if self.variance_window == 0 {
            return bad("variance_window must be at least 1");
        }
        Ok(())
    }

    /// Adam step size at iteration `k` within one depth.
    pub fn eta(&self, k: usize) -> f64 {
        if 2 * k < self.adam_max_iters {
            self.eta_coarse
        } else {
            self.eta_fine
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Spsa,
    Adam,
}

/// Log floats can be infinite or NaN when a run diverges; JSON has no such
/// numbers, so they are written as `null` and read back as NaN.
mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub depth: usize,
    /// Training loss at the parameters the step started from.
    #[serde(with = "nullable_f64")]
    pub loss: f64,
    pub val_metric: Option<f64>,
    #[serde(with = "nullable_f64")]
    pub grad_norm: f64,
    #[serde(with = "nullable_f64")]
    pub step_norm: f64,
    /// Across-coordinate variance of the circuit gradient block (Adam epochs).
    pub grad_q_variance: Option<f64>,
    pub qng_grad_q_variance: Option<f64>,
    pub circuit_evals: u64,
    pub shots: u64,
    pub gates: usize,
    pub wall_clock: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRecord {
    pub after_epoch: usize,
    pub from_depth: usize,
    pub to_depth: usize,
    #[serde(with = "nullable_f64")]
    pub loss_before: f64,
    #[serde(with = "nullable_f64")]
    pub loss_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epochs: usize,
    #[serde(with = "nullable_f64")]
    pub final_loss: f64,
    pub final_depth: usize,
    pub circuit_evals: u64,
    pub shots: u64,
    pub wall_clock: f64,
    pub spsa_wall_clock: f64,
    pub adam_wall_clock: f64,
    pub grad_variance_proxy: Option<f64>,
    pub qng_grad_variance_proxy: Option<f64>,
    pub convergence_epoch: Option<usize>,
    pub aborted: Option<String>,
}

/// One line of the newline-delimited run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        variant: ModelVariant,
        params: usize,
        config: CurriculumConfig,
        notes: Vec<String>,
    },
    Epoch(EpochRecord),
    Growth(GrowthRecord),
    Summary(RunSummary),
    /// Resolved configuration and input content hashes, added by drivers.
    Provenance {
        tool: String,
        config: serde_json::Value,
        inputs: std::collections::BTreeMap<String, String>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Epoch(e) => Some(e),
            _ => None,
        })
    }

    pub fn growths(&self) -> impl Iterator<Item = &GrowthRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Growth(g) => Some(g),
            _ => None,
        })
    }

    pub fn summary(&self) -> Option<&RunSummary> {
        self.records.iter().rev().find_map(|r| match r {
            LogRecord::Summary(s) => Some(s),
            _ => None,
        })
    }

    /// Puts a provenance record first, replacing any earlier one.
    pub fn set_provenance(
        &mut self,
        tool: impl Into<String>,
        config: serde_json::Value,
        inputs: std::collections::BTreeMap<String, String>,
    ) {
        self.records.retain(|r| !matches!(r, LogRecord::Provenance { .. }));
        self.records.insert(0, LogRecord::Provenance { tool: tool.into(), config, inputs });
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs().map(|e| e.loss).collect()
    }

    pub fn depths(&self) -> Vec<usize> {
        self.epochs().map(|e| e.depth).collect()
    }

    pub fn val_history(&self) -> Vec<f64> {
        self.epochs().filter_map(|e| e.val_metric).collect()
    }

    /// Loss trace as text with round-trip precision, for byte comparison.
    pub fn loss_trace(&self) -> String {
        self.losses().iter().map(|l| format!("{l:e}\n")).collect()
    }

    pub fn to_ndjson(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { records })
    }
}

/// Successful training result.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: HybridParams,
    pub log: RunLog,
}

/// Training stopped on an error; the partial log and last good model are kept.
#[derive(Debug)]
pub struct Aborted {
    pub error: Error,
    /// Last finite parameters, when a model existed.
    pub model: Option<HybridParams>,
    pub log: RunLog,
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training aborted after {} epochs: {}", self.log.epochs().count(), self.error)
    }
}

impl std::error::Error for Aborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn validation_metric(model: &HybridParams, val: &Validation, exact: &Backend) -> Result<f64> {
    let preds = grad::predictions(model, &val.inputs, exact)?;
    Ok(metrics::rmse(&preds, &val.targets)? * val.scale)
}

struct Driver<'a> {
    objective: &'a Objective,
    validation: Option<&'a Validation>,
    cfg: &'a CurriculumConfig,
    backend: &'a Backend,
    val_backend: Backend,
    log: RunLog,
    epoch: usize,
    start: Instant,
    phase_time: [f64; 2],
    raw_q_history: Vec<Vec<f64>>,
    qng_q_history: Vec<Vec<f64>>,
}

impl Driver<'_> {
    fn loss(&self, model: &HybridParams) -> Result<f64> {
        grad::evaluate_loss(model, self.objective, self.backend)
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        model: &HybridParams,
        phase: Phase,
        loss: f64,
        grad_norm: f64,
        step_norm: f64,
        q_var: (Option<f64>, Option<f64>),
    ) -> Result<()> {
        self.epoch += 1;
        let val_metric = match self.validation {
            Some(v) => Some(validation_metric(model, v, &self.val_backend)?),
            None => None,
        };
        self.log.records.push(LogRecord::Epoch(EpochRecord {
            epoch: self.epoch,
            phase,
            depth: model.depth(),
            loss,
            val_metric,
            grad_norm,
            step_norm,
            grad_q_variance: q_var.0,
            qng_grad_q_variance: q_var.1,
            circuit_evals: self.backend.executions(),
            shots: self.backend.shots_used(),
            gates: model.gate_count(),
            wall_clock: self.start.elapsed().as_secs_f64(),
        }));
        if self.epoch % 50 == 0 {
            log::info!("epoch {} ({phase:?}, depth {}): loss {loss:.6e}", self.epoch, model.depth());
        }
        Ok(())
    }

    fn target_step(&self, model: &HybridParams, theta: &[f64]) -> f64 {
        let norm_theta = l2_norm(&theta[self.active(model)]);
        self.cfg.spsa.target_step * if norm_theta > 0.0 { norm_theta } else { 1.0 }
    }

    fn calibrate_a(&self, model: &HybridParams, theta: &[f64], schedule: &SpsaSchedule, rng: &mut ChaCha8Rng) -> Result<f64> {
        let active = self.active(model);
        let target = self.target_step(model, theta);
        let mut total = 0.0;
        for _ in 0..self.cfg.spsa.probes {
            let est = spsa_estimate(
                |t| self.loss(&model.with_flat(t)?),
                theta,
                schedule.c_t(0),
                Some(active.clone()),
                rng,
            )?;
            total += l2_norm(&est.gradient);
        }
        let mean = total / self.cfg.spsa.probes as f64;
        Ok(if mean > 0.0 { target * (1.0 + schedule.stability).powf(schedule.alpha) / mean } else { 0.0 })
    }

    fn active(&self, model: &HybridParams) -> std::ops::Range<usize> {
        let map = model.index_map();
        if self.cfg.spsa.quantum_only && !map.quantum.is_empty() {
            map.quantum
        } else {
            0..map.len()
        }
    }

    fn spsa_stage(&mut self, model: &mut HybridParams, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.cfg.t_spsa == 0 {
            return Ok(());
        }
        let started = Instant::now();
        let s = &self.cfg.spsa;
        let mut schedule = SpsaSchedule {
            a: 0.0,
            c: s.c,
            stability: s.stability.unwrap_or(0.1 * self.cfg.t_spsa as f64),
            alpha: s.alpha,
            gamma: s.gamma,
        };
        let mut theta = model.flatten();
        schedule.a = match s.a {
            Some(a) => a,
            None => self.calibrate_a(model, &theta, &schedule, rng)?,
        };
        schedule.validate()?;
        let active = self.active(model);
        let cap = self.target_step(model, &theta);
        for t in 0..self.cfg.t_spsa {
            let loss = self.loss(model)?;
            let (mut next, est) = spsa_step(&theta, &schedule, t, |p| self.loss(&model.with_flat(p)?), Some(active.clone()), rng)?;
            let mut step = theta.iter().zip(&next).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if s.cap_steps && step > cap {
                let shrink = cap / step;
                for (n, o) in next.iter_mut().zip(&theta) {
                    *n = o + (*n - o) * shrink;
                }
                step = cap;
            }
            theta = next;
            model.set_flat(&theta)?;
            self.record(model, Phase::Spsa, loss, l2_norm(&est.gradient), step, (None, None))?;
        }
        self.phase_time[0] += started.elapsed().as_secs_f64();
        Ok(())
    }

    fn adam_stage(&mut self, model: &mut HybridParams) -> Result<()> {
        let started = Instant::now();
        let mut theta = model.flatten();
        let mut state = AdamState::new(theta.len(), self.cfg.adam);
        let mut losses: Vec<f64> = Vec::new();
        let map = model.index_map();
        for k in 0..self.cfg.adam_max_iters {
            let (loss, g) = loss_gradient(model, self.objective, self.backend)?;
            let mut values = g.values;
            let mut q_var = (None, None);
            if !map.quantum.is_empty() {
                let raw_q = values[map.quantum.clone()].to_vec();
                q_var.0 = Some(population_variance(&raw_q));
                if self.cfg.qng {
                    let pts = self.objective.encoding_inputs();
                    let batch = &pts[..pts.len().min(self.cfg.qng_batch)];
                    let f = grad::model_qfim(model, batch, self.backend, self.cfg.qng_lambda)?;
                    let d = qng_direction(&raw_q, &f.matrix, f.lambda)?;
                    q_var.1 = Some(population_variance(&d));
                    values[map.quantum.clone()].copy_from_slice(&d);
                    self.qng_q_history.push(d);
                }
                self.raw_q_history.push(raw_q);
            }
            if let Some(c) = self.cfg.clip {
                values = clip_global_norm(&values, c)?;
            }
            let next = adam_step(&theta, &mut state, &values, self.cfg.eta(k))?;
            let step = theta.iter().zip(&next).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            theta = next;
            model.set_flat(&theta)?;
            self.record(model, Phase::Adam, loss, l2_norm(&values), step, q_var)?;
            losses.push(loss);
            let w = metrics::CONVERGENCE_WINDOW + 1;
            if losses.len() >= w && convergence_check(&losses[losses.len() - w..], self.cfg.adam_tol) {
                break;
            }
        }
        self.phase_time[1] += started.elapsed().as_secs_f64();
        Ok(())
    }

    fn run(&mut self, model: &mut HybridParams) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut growth_rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        let stages = match &model.ansatz {
            Some(a) => self.cfg.l_max - a.depth + 1,
            None => self.cfg.l_max,
        };
        for stage in 0..stages {
            self.spsa_stage(model, &mut rng)?;
            self.adam_stage(model)?;
            if stage + 1 < stages {
                if let Some(a) = &model.ansatz {
                    let loss_before = self.loss(model)?;
                    let grown = a.grow_layer(self.cfg.growth_init_scale, self.cfg.l_max, &mut growth_rng)?;
                    let from_depth = a.depth;
                    model.ansatz = Some(grown);
                    let loss_after = self.loss(model)?;
                    log::info!("grew circuit to depth {}: loss {loss_before:.6e} -> {loss_after:.6e}", from_depth + 1);
                    self.log.records.push(LogRecord::Growth(GrowthRecord {
                        after_epoch: self.epoch,
                        from_depth,
                        to_depth: from_depth + 1,
                        loss_before,
                        loss_after,
                    }));
                }
            }
        }
        Ok(())
    }

    fn summary(&self, model: &HybridParams, aborted: Option<String>) -> RunSummary {
        let adam_val: Vec<f64> =
            self.log.epochs().filter(|e| e.phase == Phase::Adam).filter_map(|e| e.val_metric).collect();
        RunSummary {
            epochs: self.epoch,
            final_loss: self.log.epochs().last().map_or(f64::NAN, |e| e.loss),
            final_depth: model.depth(),
            circuit_evals: self.backend.executions(),
            shots: self.backend.shots_used(),
            wall_clock: self.start.elapsed().as_secs_f64(),
            spsa_wall_clock: self.phase_time[0],
            adam_wall_clock: self.phase_time[1],
            grad_variance_proxy: grad::grad_variance_proxy(&self.raw_q_history, self.cfg.variance_window).ok(),
            qng_grad_variance_proxy: grad::grad_variance_proxy(&self.qng_q_history, self.cfg.variance_window).ok(),
            convergence_epoch: metrics::convergence_epoch(&adam_val),
            aborted,
        }
    }
}

/// Trains `model` on `objective` through the depth curriculum.
///
/// `validation`, when given, is scored every epoch with exact expectations on
/// a separate counter so it does not inflate the training cost.
pub fn run_curriculum(
    model: HybridParams,
    objective: &Objective,
    validation: Option<&Validation>,
    cfg: &CurriculumConfig,
    backend: &Backend,
) -> std::result::Result<Trained, Box<Aborted>> {
    let mut model = model;
    let fail = |error: Error, model: HybridParams| Box::new(Aborted { error, model: Some(model), log: RunLog::default() });
    if let Err(e) = cfg.validate().and_then(|_| model.validate()) {
        return Err(fail(e, model));
    }
    if model.depth() > cfg.l_max {
        let e = Error::DepthLimit { depth: model.depth(), max: cfg.l_max };
        return Err(fail(e, model));
    }
    if objective.input_dim() != model.input_dim() {
        let e = Error::Dimension { what: "task input", expected: model.input_dim(), got: objective.input_dim() };
        return Err(fail(e, model));
    }
    let mut notes = vec![
        "gradient variance proxy: population variance across circuit parameters".to_string(),
        "training loss recorded at the start of each epoch".to_string(),
    ];
    if model.variant == ModelVariant::PureQnn {
        notes.push("raw inputs z-scored on training inputs, scaled by pi/3, assigned round-robin over layers".into());
    }
    let mut driver = Driver {
        objective,
        validation,
        cfg,
        backend,
        val_backend: Backend::exact(),
        log: RunLog::default(),
        epoch: 0,
        start: Instant::now(),
        phase_time: [0.0; 2],
        raw_q_history: Vec::new(),
        qng_q_history: Vec::new(),
    };
    driver.log.records.push(LogRecord::Header {
        variant: model.variant,
        params: model.num_params(),
        config: cfg.clone(),
        notes,
    });
    let snapshot = model.clone();
    match driver.run(&mut model) {
        Ok(()) => {
            let s = driver.summary(&model, None);
            driver.log.records.push(LogRecord::Summary(s));
            Ok(Trained { model, log: driver.log })
        }
        Err(error) => {
            let s = driver.summary(&model, Some(error.to_string()));
            driver.log.records.push(LogRecord::Summary(s));
            let model = if model.flatten().iter().all(|v| v.is_finite()) { model } else { snapshot };
            Err(Box::new(Aborted { error, model: Some(model), log: driver.log }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::Topology;
    use crate::hybrid::ModelShape;
    use crate::tasks::SupervisedData;

    #[test]
    fn schedule_decays() {
        let s = SpsaSchedule { a: 0.2, c: 0.1, stability: 10.0, alpha: 0.602, gamma: 0.101 };
        assert!(s.a_t(1) < s.a_t(0) && s.c_t(1) < s.c_t(0));
        assert!(s.a_t(10_000_000) < 1e-4 * s.a && s.c_t(usize::MAX / 2) < 0.02 * s.c);
        assert!(SpsaSchedule { alpha: 1.5, ..s }.validate().is_err());
    }

    #[test]
    fn spsa_step_contracts_parabola() {
        let s = SpsaSchedule { a: 0.3, c: 0.1, stability: 0.0, alpha: 0.602, gamma: 0.101 };
        let mut theta = vec![2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in 0..30 {
            let (next, _) = spsa_step(&theta, &s, t, |p| Ok(p[0] * p[0]), None, &mut rng).unwrap();
            assert!(next[0].abs() < theta[0].abs());
            theta = next;
        }
        let zero = SpsaSchedule { a: 0.0, ..s };
        let (same, _) = spsa_step(&[1.5], &zero, 0, |p| Ok(p[0] * p[0]), None, &mut rng).unwrap();
        assert_eq!(same, vec![1.5]);
    }

    #[test]
    fn adam_examples() {
        let mut st = AdamState::new(2, AdamConfig::default());
        assert_eq!(adam_step(&[0.3, -0.2], &mut st, &[0.0, 0.0], 0.01).unwrap(), vec![0.3, -0.2]);
        let mut st = AdamState::new(1, AdamConfig::default());
        let next = adam_step(&[1.0], &mut st, &[1.0], 0.01).unwrap();
        assert!((1.0 - next[0] - 0.01).abs() < 1e-9);
        let mut theta = vec![0.0];
        let mut st = AdamState::new(1, AdamConfig::default());
        for _ in 0..5000 {
            let next = adam_step(&theta, &mut st, &[0.25], 0.01).unwrap();
            let step = theta[0] - next[0];
            theta = next;
            assert!(step <= 0.01 + 1e-9);
        }
        let next = adam_step(&theta, &mut st, &[0.25], 0.01).unwrap();
        assert!((theta[0] - next[0] - 0.01).abs() < 1e-6);
        assert!(st.v.iter().all(|v| *v >= 0.0));
        assert!(adam_step(&[0.0], &mut st, &[f64::NAN], 0.01).is_err());
    }

    fn toy(seed: u64, variant: ModelVariant) -> (HybridParams, Objective) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = ModelShape::new(2, 3);
        shape.hidden = vec![6];
        shape.topology = Topology::Linear;
        let model = HybridParams::init(variant, &shape, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let ys = xs.iter().map(|x| (x[0] * 2.0).sin() * x[1]).collect();
        (model, Objective::Supervised(SupervisedData::new(xs, ys).unwrap()))
    }

    fn small_cfg() -> CurriculumConfig {
        CurriculumConfig { l_max: 3, t_spsa: 7, adam_max_iters: 30, adam_tol: 1e-9, ..Default::default() }
    }

    #[test]
    fn curriculum_mechanics() {
        let (model, obj) = toy(1, ModelVariant::Hybrid);
        let run = run_curriculum(model, &obj, None, &small_cfg(), &Backend::exact()).unwrap();
        let depths = run.log.depths();
        assert!(depths.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
        assert_eq!(run.log.growths().count(), 2);
        assert_eq!(run.model.depth(), 3);
        for d in 1..=3 {
            let spsa = run.log.epochs().filter(|e| e.depth == d && e.phase == Phase::Spsa).count();
            assert_eq!(spsa, 7);
        }
        for g in run.log.growths() {
            assert_eq!(g.to_depth, g.from_depth + 1);
            assert!((g.loss_after - g.loss_before).abs() <= 1e-12 * g.loss_before.max(1e-12));
        }
        let summary = run.log.summary().unwrap();
        assert_eq!(summary.final_depth, 3);
        assert!(summary.final_loss < run.log.losses()[0]);
    }

    #[test]
    fn reproducible_traces() {
        let cfg = small_cfg();
        let a = {
            let (m, o) = toy(2, ModelVariant::Hybrid);
            run_curriculum(m, &o, None, &cfg, &Backend::exact()).unwrap().log
        };
        let b = {
            let (m, o) = toy(2, ModelVariant::Hybrid);
            run_curriculum(m, &o, None, &cfg, &Backend::exact()).unwrap().log
        };
        assert_eq!(a.loss_trace(), b.loss_trace());
    }

    #[test]
    fn ablation_shapes() {
        let (m, o) = toy(3, ModelVariant::Hybrid);
        let adam_only = CurriculumConfig { l_max: 1, t_spsa: 0, ..small_cfg() };
        let log = run_curriculum(m.clone(), &o, None, &adam_only, &Backend::exact()).unwrap().log;
        assert!(log.epochs().all(|e| e.phase == Phase::Adam));
        let spsa_only = CurriculumConfig { l_max: 1, adam_max_iters: 0, ..small_cfg() };
        let log = run_curriculum(m, &o, None, &spsa_only, &Backend::exact()).unwrap().log;
        assert!(log.epochs().all(|e| e.phase == Phase::Spsa));
        assert_eq!(log.epochs().count(), 7);
    }

    #[test]
    fn frozen_objective_grows_once() {
        let (mut m, _) = toy(4, ModelVariant::Hybrid);
        let zeros = vec![0.0; m.readout.w.len()];
        m.readout.w = zeros;
        let xs = vec![vec![0.1, 0.2], vec![-0.3, 0.5]];
        let obj = Objective::Supervised(SupervisedData::new(xs, vec![0.0, 0.0]).unwrap());
        let cfg = CurriculumConfig { l_max: 2, t_spsa: 0, adam_max_iters: 40, adam_tol: 1e-3, ..Default::default() };
        let run = run_curriculum(m, &obj, None, &cfg, &Backend::exact()).unwrap();
        let losses = run.log.losses();
        assert!(losses.iter().all(|l| *l == losses[0]));
        assert_eq!(run.log.growths().count(), 1);
        assert_eq!(run.model.depth(), 2);
        // converged after one window at each depth
        assert_eq!(losses.len(), 22);
    }

    #[test]
    fn classical_variant_runs_without_circuits() {
        let (m, o) = toy(5, ModelVariant::ClassicalMlp);
        let b = Backend::exact();
        let run = run_curriculum(m, &o, None, &small_cfg(), &b).unwrap();
        assert_eq!(b.executions(), 0);
        assert_eq!(run.log.growths().count(), 0);
        assert!(run.log.epochs().all(|e| e.gates == 0));
    }

    #[test]
    fn qng_and_clip_path() {
        let (m, o) = toy(6, ModelVariant::Hybrid);
        let cfg = CurriculumConfig { l_max: 1, t_spsa: 0, adam_max_iters: 5, qng: true, clip: Some(1.0), ..Default::default() };
        let run = run_curriculum(m, &o, None, &cfg, &Backend::exact()).unwrap();
        assert!(run.log.epochs().all(|e| e.qng_grad_q_variance.is_some() && e.grad_norm <= 1.0 + 1e-12));
        let s = run.log.summary().unwrap();
        assert!(s.grad_variance_proxy.is_some() && s.qng_grad_variance_proxy.is_some());
    }

    #[test]
    fn validation_is_logged_and_invalid_config_rejected() {
        let (m, o) = toy(7, ModelVariant::Hybrid);
        let val = Validation { inputs: vec![vec![0.0, 0.1]], targets: vec![0.2], scale: 10.0 };
        let cfg = CurriculumConfig { l_max: 1, t_spsa: 2, adam_max_iters: 3, ..Default::default() };
        let run = run_curriculum(m.clone(), &o, Some(&val), &cfg, &Backend::exact()).unwrap();
        assert_eq!(run.log.val_history().len(), 5);
        let bad = CurriculumConfig { l_max: 0, ..cfg };
        let err = run_curriculum(m, &o, None, &bad, &Backend::exact()).unwrap_err();
        assert!(matches!(err.error, Error::Invalid(_)));
    }

    #[test]
    fn ndjson_round_trip() {
        let (m, o) = toy(8, ModelVariant::PureQnn);
        let cfg = CurriculumConfig { l_max: 2, t_spsa: 2, adam_max_iters: 2, ..Default::default() };
        let log = run_curriculum(m, &o, None, &cfg, &Backend::exact()).unwrap().log;
        let text = log.to_ndjson().unwrap();
        assert_eq!(text.lines().count(), log.records.len());
        assert_eq!(RunLog::from_ndjson(&text).unwrap(), log);
    }

    #[test]
    fn diverged_values_survive_the_log() {
        let (m, o) = toy(8, ModelVariant::Hybrid);
        let cfg = CurriculumConfig { l_max: 1, t_spsa: 1, adam_max_iters: 0, ..Default::default() };
        let mut log = run_curriculum(m, &o, None, &cfg, &Backend::exact()).unwrap().log;
        let LogRecord::Epoch(e) = log.records.iter_mut().find(|r| matches!(r, LogRecord::Epoch(_))).unwrap() else {
            unreachable!()
        };
        e.step_norm = f64::INFINITY;
        e.grad_norm = f64::NAN;
        let back = RunLog::from_ndjson(&log.to_ndjson().unwrap()).unwrap();
        let e = back.epochs().next().unwrap();
        assert!(e.step_norm.is_nan() && e.grad_norm.is_nan());
        assert!(e.loss.is_finite());
    }
}
