//! End-to-end runs shared by the command-line tool and the acceptance suite:
//! model construction, PDE training and evaluation, tabular folds, presets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::Topology;
use crate::classical::DEFAULT_PARAM_BUDGET;
use crate::error::{Error, Result};
use crate::grad;
use crate::hybrid::{HybridParams, ModelShape, ModelVariant, RawEncoding, DEFAULT_FD_STEP};
use crate::metrics;
use crate::optim::{run_curriculum, Aborted, CurriculumConfig, RunLog};
use crate::qsim::Backend;
use crate::tasks::{
    collocation_grid, evaluation_grid, Fold, Objective, PdeBenchmark, PdeProblem, TabularData,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_qubits: usize,
    pub hidden: Vec<usize>,
    /// Defaults to linear up to 4 qubits, circular above.
    pub topology: Option<Topology>,
    pub param_budget: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { n_qubits: 4, hidden: vec![32, 16], topology: None, param_budget: DEFAULT_PARAM_BUDGET }
    }
}

impl ModelConfig {
    pub fn shape(&self, input_dim: usize) -> ModelShape {
        ModelShape {
            input_dim,
            n_qubits: self.n_qubits,
            hidden: self.hidden.clone(),
            topology: self.topology.unwrap_or(Topology::default_for(self.n_qubits)),
            param_budget: self.param_budget,
        }
    }
}

/// Fresh depth-1 model; the pure circuit's encoding is fitted on `encoding_inputs`.
pub fn build_model(
    variant: ModelVariant,
    input_dim: usize,
    cfg: &ModelConfig,
    encoding_inputs: &[Vec<f64>],
    seed: u64,
) -> Result<HybridParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = HybridParams::init(variant, &cfg.shape(input_dim), &mut rng)?;
    Ok(match variant {
        ModelVariant::PureQnn => model.with_encoding(RawEncoding::fit(encoding_inputs)?),
        _ => model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeSetup {
    pub bench: PdeBenchmark,
    pub train_resolution: usize,
    pub eval_resolution: usize,
    pub fd_step: f64,
}

impl Default for PdeSetup {
    fn default() -> Self {
        Self { bench: PdeBenchmark::Poisson2d, train_resolution: 30, eval_resolution: 100, fd_step: DEFAULT_FD_STEP }
    }
}

impl PdeSetup {
    pub fn objective(&self) -> Result<Objective> {
        let pts = collocation_grid(self.bench.dim(), self.train_resolution, self.fd_step)?;
        Ok(Objective::Pde(PdeProblem::new(self.bench, pts, self.fd_step)?))
    }
}

/// Hard-constrained predictions against the analytic solution.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeEvaluation {
    pub points: Vec<Vec<f64>>,
    pub truth: Vec<f64>,
    pub prediction: Vec<f64>,
    pub relative_l2: f64,
}

pub fn evaluate_pde(model: &HybridParams, bench: PdeBenchmark, resolution: usize) -> Result<PdeEvaluation> {
    let points = evaluation_grid(bench.dim(), resolution)?;
    let backend = Backend::exact();
    let raw = grad::predictions(model, &points, &backend)?;
    let prediction: Vec<f64> = raw.iter().zip(&points).map(|(r, p)| r * crate::hybrid::boundary_factor(p)).collect();
    let truth: Vec<f64> = points.iter().map(|p| bench.solution(p)).collect();
    let relative_l2 = metrics::relative_l2(&prediction, &truth)?;
    Ok(PdeEvaluation { points, truth, prediction, relative_l2 })
}

#[derive(Debug, Clone)]
pub struct PdeOutcome {
    pub model: HybridParams,
    pub log: RunLog,
    pub relative_l2: f64,
}

/// Builds a model from `seed`, trains it with `curriculum.seed = seed` and
/// scores it on the evaluation grid.
pub fn run_pde(
    setup: &PdeSetup,
    variant: ModelVariant,
    model_cfg: &ModelConfig,
    curriculum: &CurriculumConfig,
    backend: &Backend,
    seed: u64,
) -> std::result::Result<PdeOutcome, Box<Aborted>> {
    let wrap = |error: Error| Box::new(Aborted { error, model: None, log: RunLog::default() });
    let objective = setup.objective().map_err(wrap)?;
    let model = build_model(variant, setup.bench.dim(), model_cfg, objective.encoding_inputs(), seed).map_err(wrap)?;
    let cfg = CurriculumConfig { seed, ..curriculum.clone() };
    let trained = run_curriculum(model, &objective, None, &cfg, backend)?;
    let eval = evaluate_pde(&trained.model, setup.bench, setup.eval_resolution)
        .map_err(|e| Box::new(Aborted { error: e, model: Some(trained.model.clone()), log: trained.log.clone() }))?;
    Ok(PdeOutcome { model: trained.model, log: trained.log, relative_l2: eval.relative_l2 })
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub model: HybridParams,
    pub log: RunLog,
    /// Original-scale RMSE.
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub convergence_epoch: Option<usize>,
}

/// Trains on one fold (statistics from the training rows only) and reports
/// original-scale RMSE. The held-out rows are scored every epoch for the
/// convergence statistic; they never influence the updates.
pub fn run_fold(
    data: &TabularData,
    fold: &Fold,
    variant: ModelVariant,
    model_cfg: &ModelConfig,
    curriculum: &CurriculumConfig,
    backend: &Backend,
    seed: u64,
) -> std::result::Result<FoldOutcome, Box<Aborted>> {
    let wrap = |error: Error| Box::new(Aborted { error, model: None, log: RunLog::default() });
    let split = data.split(fold).map_err(wrap)?;
    let objective = split.train_objective().map_err(wrap)?;
    let validation = split.test_validation();
    let model = build_model(variant, data.dim(), model_cfg, &split.train_x, seed).map_err(wrap)?;
    let cfg = CurriculumConfig { seed, ..curriculum.clone() };
    let trained = run_curriculum(model, &objective, Some(&validation), &cfg, backend)?;
    let exact = Backend::exact();
    let score = |xs: &[Vec<f64>], ys: &[f64]| -> Result<f64> {
        let p = grad::predictions(&trained.model, xs, &exact)?;
        let p: Vec<f64> = p.iter().map(|v| split.target.invert(*v)).collect();
        let y: Vec<f64> = ys.iter().map(|v| split.target.invert(*v)).collect();
        metrics::rmse(&p, &y)
    };
    let scores = score(&split.train_x, &split.train_y).and_then(|tr| Ok((tr, score(&split.test_x, &split.test_y)?)));
    let (train_rmse, test_rmse) = match scores {
        Ok(s) => s,
        Err(e) => return Err(Box::new(Aborted { error: e, model: Some(trained.model), log: trained.log })),
    };
    let convergence_epoch = trained.log.summary().and_then(|s| s.convergence_epoch);
    Ok(FoldOutcome { model: trained.model, log: trained.log, train_rmse, test_rmse, convergence_epoch })
}

/// Optimizer arms of the two-stage ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    TwoStage,
    AdamOnly,
    SpsaOnly,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::TwoStage, Strategy::AdamOnly, Strategy::SpsaOnly];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::TwoStage => "two_stage",
            Strategy::AdamOnly => "adam_only",
            Strategy::SpsaOnly => "spsa_only",
        }
    }

    /// Derives the arm from a two-stage curriculum. The single-stage arms run
    /// at depth 1 with the whole epoch budget `l_max·(t_spsa + adam_max_iters)`.
    pub fn apply(self, two_stage: &CurriculumConfig) -> CurriculumConfig {
        let budget = two_stage.l_max * (two_stage.t_spsa + two_stage.adam_max_iters);
        match self {
            Strategy::TwoStage => two_stage.clone(),
            Strategy::AdamOnly => CurriculumConfig { l_max: 1, t_spsa: 0, adam_max_iters: budget, ..two_stage.clone() },
            Strategy::SpsaOnly => CurriculumConfig { l_max: 1, t_spsa: budget, adam_max_iters: 0, ..two_stage.clone() },
        }
    }
}

/// Resource proxies of a finished run. Exact-expectation runs count one shot
/// per circuit execution; the gate count is the final circuit's.
pub fn cost_profile(log: &RunLog) -> Option<metrics::CostProfile> {
    let summary = log.summary()?;
    let gates = log.epochs().last().map_or(0, |e| e.gates) as u64;
    if gates == 0 {
        return Some(metrics::CostProfile::classical(summary.wall_clock));
    }
    let shots = if summary.shots > 0 { summary.shots } else { summary.circuit_evals };
    Some(metrics::CostProfile { wall_clock: summary.wall_clock, shots, gates })
}

/// Named optimizer settings for the scaled-down experiments.
pub mod presets {
    use super::*;

    /// Poisson comparison at desk scale: 15² collocation, depth 1 → 2,
    /// about 500 epochs in total.
    pub fn poisson_desk() -> (PdeSetup, ModelConfig, CurriculumConfig) {
        let setup = PdeSetup { bench: PdeBenchmark::Poisson2d, train_resolution: 15, eval_resolution: 50, ..Default::default() };
        let curriculum = CurriculumConfig {
            l_max: 2,
            t_spsa: 25,
            adam_max_iters: 225,
            adam_tol: 1e-4,
            ..Default::default()
        };
        (setup, ModelConfig::default(), curriculum)
    }

    /// Two-stage curriculum for the tabular ablation.
    pub fn tabular_two_stage() -> (ModelConfig, CurriculumConfig) {
        let curriculum = CurriculumConfig { l_max: 2, t_spsa: 25, adam_max_iters: 150, adam_tol: 1e-4, ..Default::default() };
        (ModelConfig::default(), curriculum)
    }

    /// Same epoch budget as the two-stage run, Adam only.
    pub fn tabular_adam_only() -> (ModelConfig, CurriculumConfig) {
        let (m, c) = tabular_two_stage();
        (m, Strategy::AdamOnly.apply(&c))
    }

    /// Same epoch budget as the two-stage run, SPSA only.
    pub fn tabular_spsa_only() -> (ModelConfig, CurriculumConfig) {
        let (m, c) = tabular_two_stage();
        (m, Strategy::SpsaOnly.apply(&c))
    }

    /// Full-scale curriculum: depth 1 → 2 with 100 SPSA iterations and up to
    /// 900 Adam epochs per depth, 2000 epochs in total.
    pub fn full_curriculum() -> CurriculumConfig {
        CurriculumConfig { l_max: 2, t_spsa: 100, adam_max_iters: 900, ..Default::default() }
    }
}
