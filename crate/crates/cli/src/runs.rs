//! Single training runs with their artifacts, shared by `train` and `benchmark`.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use qreg_core::experiment::{self, evaluate_pde, run_fold, run_pde, ModelConfig};
use qreg_core::hybrid::{HybridParams, ModelVariant};
use qreg_core::metrics::CostProfile;
use qreg_core::optim::{Aborted, CurriculumConfig, RunLog};
use qreg_core::qsim::{Backend, Measurement};
use qreg_core::tasks::{Fold, PdeBenchmark, TabularData};

use crate::artifacts::{self, CHECKPOINT, ERROR_GRID, RUNLOG};
use crate::config::PdeOptions;
use crate::error::{CliError, CliResult};
use crate::provenance::Provenance;

/// What a finished (or aborted) run reports in the summary JSON.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub variant: ModelVariant,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    pub epochs: usize,
    pub final_depth: usize,
    pub final_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_rmse: Option<f64>,
    pub convergence_epoch: Option<usize>,
    pub circuit_evals: u64,
    pub shots: u64,
    pub wall_clock: f64,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    #[serde(skip)]
    pub cost: Option<CostProfile>,
}

impl RunRecord {
    fn from_log(variant: ModelVariant, seed: u64, fold: Option<usize>, log: &RunLog, dir: &Path) -> Self {
        let s = log.summary();
        Self {
            variant,
            seed,
            fold,
            epochs: s.map_or(0, |s| s.epochs),
            final_depth: s.map_or(0, |s| s.final_depth),
            final_loss: s.map_or(f64::NAN, |s| s.final_loss),
            relative_l2: None,
            train_rmse: None,
            test_rmse: None,
            convergence_epoch: s.and_then(|s| s.convergence_epoch),
            circuit_evals: s.map_or(0, |s| s.circuit_evals),
            shots: s.map_or(0, |s| s.shots),
            wall_clock: s.map_or(0.0, |s| s.wall_clock),
            output_dir: dir.to_path_buf(),
            aborted: s.and_then(|s| s.aborted.clone()),
            cost: experiment::cost_profile(log),
        }
    }
}

/// Fails with a config error when the model cannot be built at all.
pub fn check_model(variant: ModelVariant, input_dim: usize, model: &ModelConfig) -> CliResult<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    HybridParams::init(variant, &model.shape(input_dim), &mut rng).map(drop).map_err(CliError::config)
}

/// Seeds the backend's shot sampler from the run seed.
pub fn backend(measurement: Measurement, seed: u64) -> Backend {
    Backend::new(measurement, seed ^ 0x5851_f42d_4c95_7f2d)
}

/// Runs `f` over `items` in order, optionally in parallel; results keep the
/// input order either way.
pub fn for_each<T: Sync, R: Send>(items: &[T], parallel: bool, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

/// Persists what an aborted run left behind and converts it to an error.
fn keep_partial(dir: &Path, prov: &Provenance, aborted: Box<Aborted>) -> CliError {
    let _ = artifacts::write_runlog(&dir.join(RUNLOG), prov, &aborted.log);
    if let Some(model) = &aborted.model {
        let _ = artifacts::write_checkpoint(&dir.join(CHECKPOINT), prov, model);
    }
    log::error!("run in {} aborted: {}", dir.display(), aborted.error);
    CliError::Aborted(format!("{} ({})", aborted.error, dir.display()))
}

pub struct PdeJob<'a> {
    pub bench: PdeBenchmark,
    pub variant: ModelVariant,
    pub seed: u64,
    pub pde: &'a PdeOptions,
    pub model: &'a ModelConfig,
    pub curriculum: &'a CurriculumConfig,
    pub measurement: Measurement,
    pub dir: PathBuf,
    /// Also dump the dense error grid.
    pub export_grid: bool,
}

pub fn pde_run(job: &PdeJob, prov: &Provenance) -> CliResult<RunRecord> {
    let setup = job.pde.setup(job.bench);
    let backend = backend(job.measurement, job.seed);
    log::info!("{} / {} / seed {}", job.bench.name(), job.variant.name(), job.seed);
    let out = run_pde(&setup, job.variant, job.model, job.curriculum, &backend, job.seed)
        .map_err(|a| keep_partial(&job.dir, prov, a))?;
    artifacts::write_runlog(&job.dir.join(RUNLOG), prov, &out.log)?;
    artifacts::write_checkpoint(&job.dir.join(CHECKPOINT), prov, &out.model)?;
    if job.export_grid {
        let eval = evaluate_pde(&out.model, job.bench, setup.eval_resolution)?;
        artifacts::write_with_sidecar(&job.dir.join(ERROR_GRID), prov, &artifacts::error_grid_csv(job.bench, &eval))?;
    }
    let mut rec = RunRecord::from_log(job.variant, job.seed, None, &out.log, &job.dir);
    rec.relative_l2 = Some(out.relative_l2);
    Ok(rec)
}

pub struct FoldJob<'a> {
    pub data: &'a TabularData,
    pub fold_index: usize,
    pub fold: &'a Fold,
    pub variant: ModelVariant,
    pub seed: u64,
    pub model: &'a ModelConfig,
    pub curriculum: &'a CurriculumConfig,
    pub measurement: Measurement,
    pub dir: PathBuf,
}

pub fn fold_run(job: &FoldJob, prov: &Provenance) -> CliResult<RunRecord> {
    let backend = backend(job.measurement, job.seed);
    log::info!("{} / fold {} / {} / seed {}", job.data.name, job.fold_index, job.variant.name(), job.seed);
    let out = run_fold(job.data, job.fold, job.variant, job.model, job.curriculum, &backend, job.seed)
        .map_err(|a| keep_partial(&job.dir, prov, a))?;
    artifacts::write_runlog(&job.dir.join(RUNLOG), prov, &out.log)?;
    artifacts::write_checkpoint(&job.dir.join(CHECKPOINT), prov, &out.model)?;
    let mut rec = RunRecord::from_log(job.variant, job.seed, Some(job.fold_index), &out.log, &job.dir);
    rec.train_rmse = Some(out.train_rmse);
    rec.test_rmse = Some(out.test_rmse);
    rec.convergence_epoch = out.convergence_epoch;
    Ok(rec)
}
