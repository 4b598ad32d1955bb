//! Experiment configuration: one JSON document, optionally inheriting from a
//! named preset or another config file through the `preset` key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use qreg_core::experiment::{presets, ModelConfig, PdeSetup, Strategy};
use qreg_core::hybrid::{ModelVariant, DEFAULT_FD_STEP};
use qreg_core::optim::CurriculumConfig;
use qreg_core::qsim::Measurement;
use qreg_core::tasks::{PdeBenchmark, TabularSchema};

use crate::error::{CliError, CliResult};
use crate::provenance::{blob_hash, read_input};

/// Relative output directories are resolved against this variable when set.
pub const OUTPUT_ROOT_ENV: &str = "QREG_OUTPUT_ROOT";

/// Task string selecting the built-in Yacht-like surrogate table.
pub const YACHT_SURROGATE: &str = "yacht_surrogate";

const MAX_PRESET_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeOptions {
    pub train_2d: usize,
    pub eval_2d: usize,
    pub train_3d: usize,
    pub eval_3d: usize,
    pub fd_step: f64,
}

impl Default for PdeOptions {
    fn default() -> Self {
        Self { train_2d: 30, eval_2d: 100, train_3d: 12, eval_3d: 30, fd_step: DEFAULT_FD_STEP }
    }
}

impl PdeOptions {
    pub fn setup(&self, bench: PdeBenchmark) -> PdeSetup {
        let (train, eval) = if bench.dim() == 3 { (self.train_3d, self.eval_3d) } else { (self.train_2d, self.eval_2d) };
        PdeSetup { bench, train_resolution: train, eval_resolution: eval, fd_step: self.fd_step }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularOptions {
    /// Target column of a file task; defaults to the last.
    pub target_column: Option<usize>,
    pub header_lines: usize,
    pub folds: usize,
    pub fold_seed: u64,
    /// Fold trained by `train`.
    pub fold: usize,
    /// Limits the folds visited by `benchmark`.
    pub max_folds: Option<usize>,
    pub surrogate_seed: u64,
}

impl Default for TabularOptions {
    fn default() -> Self {
        Self { target_column: None, header_lines: 0, folds: 5, fold_seed: 0, fold: 0, max_folds: None, surrogate_seed: 0 }
    }
}

impl TabularOptions {
    pub fn schema(&self) -> TabularSchema {
        TabularSchema { target_column: self.target_column, header_lines: self.header_lines }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub variant: ModelVariant,
    pub input_dim: usize,
    pub n_qubits: usize,
    pub depth: usize,
    pub hidden: Vec<usize>,
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Fault injection: flips the sign of the analytic gradient.
    pub corrupt_gradient_sign: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            variant: ModelVariant::Hybrid,
            input_dim: 2,
            n_qubits: 4,
            depth: 2,
            hidden: vec![8],
            samples: 8,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            corrupt_gradient_sign: false,
        }
    }
}

pub const GRADCHECK_MAX_PARAMS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// A PDE benchmark name, `yacht_surrogate`, or a path to a numeric table.
    pub task: String,
    /// Variant trained by `train`.
    pub variant: ModelVariant,
    /// Variants compared by `benchmark`.
    pub variants: Vec<ModelVariant>,
    /// Benchmarks visited by the PDE suite.
    pub benchmarks: Vec<PdeBenchmark>,
    /// Arms of the ablation suite.
    pub strategies: Vec<Strategy>,
    pub model: ModelConfig,
    pub curriculum: CurriculumConfig,
    pub pde: PdeOptions,
    pub tabular: TabularOptions,
    pub seeds: Vec<u64>,
    /// Shot budget per circuit execution; exact expectations when unset.
    pub shots: Option<u32>,
    pub parallel_seeds: bool,
    pub output_dir: Option<PathBuf>,
    /// Baseline row for the cost-adjusted columns.
    pub reference: ModelVariant,
    pub rae_alpha: f64,
    pub gradcheck: GradcheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: PdeBenchmark::Poisson2d.name().into(),
            variant: ModelVariant::Hybrid,
            variants: vec![ModelVariant::Hybrid, ModelVariant::PureQnn, ModelVariant::ClassicalMlp],
            benchmarks: PdeBenchmark::ALL.to_vec(),
            strategies: Strategy::ALL.to_vec(),
            model: ModelConfig::default(),
            curriculum: CurriculumConfig::default(),
            pde: PdeOptions::default(),
            tabular: TabularOptions::default(),
            seeds: vec![0],
            shots: None,
            parallel_seeds: false,
            output_dir: None,
            reference: ModelVariant::ClassicalMlp,
            rae_alpha: qreg_core::metrics::DEFAULT_RAE_ALPHA,
            gradcheck: GradcheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Pde(PdeBenchmark),
    Surrogate,
    File(PathBuf),
}

impl ExperimentConfig {
    /// Resolves the task string; file paths are taken relative to `base`.
    pub fn task(&self, base: &Path) -> Task {
        if let Ok(b) = PdeBenchmark::from_str(&self.task) {
            Task::Pde(b)
        } else if self.task == YACHT_SURROGATE {
            Task::Surrogate
        } else {
            Task::File(base.join(&self.task))
        }
    }

    pub fn measurement(&self) -> Measurement {
        self.shots.map_or(Measurement::Exact, Measurement::Shots)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.curriculum.validate().map_err(CliError::config)?;
        if self.seeds.is_empty() {
            return bad("`seeds` must not be empty".into());
        }
        if self.variants.is_empty() || self.benchmarks.is_empty() || self.strategies.is_empty() {
            return bad("`variants`, `benchmarks` and `strategies` must not be empty".into());
        }
        if self.shots == Some(0) {
            return bad("`shots` must be positive".into());
        }
        if self.model.n_qubits == 0 {
            return bad("`model.n_qubits` must be positive".into());
        }
        if self.task.trim().is_empty() {
            return bad("`task` must not be empty".into());
        }
        let p = &self.pde;
        if !(p.fd_step > 0.0) || p.train_2d < 3 || p.train_3d < 3 || p.eval_2d < 2 || p.eval_3d < 2 {
            return bad(format!("invalid PDE grid options {p:?}"));
        }
        let t = &self.tabular;
        if t.folds < 2 || t.fold >= t.folds || t.max_folds == Some(0) {
            return bad(format!("invalid fold options {t:?}"));
        }
        if !(self.rae_alpha >= 0.0) {
            return bad("`rae_alpha` must be non-negative".into());
        }
        let g = &self.gradcheck;
        if g.input_dim == 0 || g.n_qubits == 0 || g.depth == 0 || g.samples == 0 || !(g.step > 0.0) || !(g.tolerance > 0.0) {
            return bad(format!("invalid gradcheck options {g:?}"));
        }
        Ok(())
    }
}

/// Built-in presets. Desk-scale presets finish in minutes on a laptop.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let base = ExperimentConfig::default();
    let desk_pde = PdeOptions { train_2d: 15, eval_2d: 50, train_3d: 6, eval_3d: 20, ..Default::default() };
    Some(match name {
        "poisson_desk" => {
            let (_, model, curriculum) = presets::poisson_desk();
            ExperimentConfig {
                task: PdeBenchmark::Poisson2d.name().into(),
                variants: vec![ModelVariant::Hybrid, ModelVariant::PureQnn],
                benchmarks: vec![PdeBenchmark::Poisson2d],
                model,
                curriculum,
                pde: desk_pde,
                seeds: (0..5).collect(),
                ..base
            }
        }
        "pde_desk" => {
            let (_, model, curriculum) = presets::poisson_desk();
            ExperimentConfig { model, curriculum, pde: desk_pde, seeds: vec![0, 1, 2], ..base }
        }
        "pde_full" => ExperimentConfig { curriculum: presets::full_curriculum(), seeds: (0..5).collect(), ..base },
        "yacht_desk" => {
            let (model, curriculum) = presets::tabular_two_stage();
            ExperimentConfig { task: YACHT_SURROGATE.into(), model, curriculum, ..base }
        }
        "yacht_full" => {
            ExperimentConfig { task: YACHT_SURROGATE.into(), curriculum: presets::full_curriculum(), ..base }
        }
        "ablation_desk" => {
            let (model, curriculum) = presets::tabular_two_stage();
            ExperimentConfig {
                task: YACHT_SURROGATE.into(),
                model,
                curriculum,
                tabular: TabularOptions { max_folds: Some(1), ..Default::default() },
                seeds: vec![0, 1, 2],
                ..base
            }
        }
        "ablation_full" => ExperimentConfig {
            task: YACHT_SURROGATE.into(),
            curriculum: presets::full_curriculum(),
            tabular: TabularOptions { max_folds: Some(1), ..Default::default() },
            seeds: (0..5).collect(),
            ..base
        },
        "default" => base,
        _ => return None,
    })
}

pub const PRESETS: [&str; 8] =
    ["default", "poisson_desk", "pde_desk", "pde_full", "yacht_desk", "yacht_full", "ablation_desk", "ablation_full"];

/// A validated config together with its provenance inputs.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    /// The fully resolved document.
    pub resolved: Value,
    /// Directory that relative task paths are resolved against.
    pub base_dir: PathBuf,
    /// File path → content hash of every config file read.
    pub inputs: BTreeMap<String, String>,
    /// File stem of the top-level config, used for default output names.
    pub name: String,
}

impl Loaded {
    pub fn task(&self) -> Task {
        self.config.task(&self.base_dir)
    }
}

/// Reads, resolves and validates a config file.
pub fn load(path: &Path) -> CliResult<Loaded> {
    let mut inputs = BTreeMap::new();
    let value = read_document(path, &mut inputs, 0)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
    finish(value, base_dir, inputs, name)
}

/// Resolves and validates an in-memory document.
pub fn from_value(value: Value, base_dir: &Path) -> CliResult<Loaded> {
    let mut inputs = BTreeMap::new();
    let value = resolve(value, base_dir, &mut inputs, 0)?;
    finish(value, base_dir.to_path_buf(), inputs, "run".into())
}

fn finish(value: Value, base_dir: PathBuf, inputs: BTreeMap<String, String>, name: String) -> CliResult<Loaded> {
    let config: ExperimentConfig = serde_json::from_value(value).map_err(CliError::config)?;
    config.validate()?;
    let resolved = serde_json::to_value(&config)?;
    Ok(Loaded { config, resolved, base_dir, inputs, name })
}

fn read_document(path: &Path, inputs: &mut BTreeMap<String, String>, depth: usize) -> CliResult<Value> {
    let bytes = read_input(path)?;
    inputs.insert(path.display().to_string(), blob_hash(&bytes));
    let value: Value = serde_json::from_slice(&bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    resolve(value, base, inputs, depth)
}

/// Expands the `preset` key: a built-in name or a path to another config
/// (relative to `base`). Keys of the inheriting document override the preset,
/// merging objects recursively.
fn resolve(value: Value, base: &Path, inputs: &mut BTreeMap<String, String>, depth: usize) -> CliResult<Value> {
    let Value::Object(mut map) = value else {
        return Err(CliError::config("config must be a JSON object"));
    };
    let Some(parent) = map.remove("preset") else {
        return Ok(Value::Object(map));
    };
    if depth >= MAX_PRESET_DEPTH {
        return Err(CliError::config("preset chain too deep (cycle?)"));
    }
    let Value::String(parent) = parent else {
        return Err(CliError::config("`preset` must be a string"));
    };
    let inherited = match preset(&parent) {
        Some(cfg) => serde_json::to_value(cfg)?,
        None if parent.ends_with(".json") => read_document(&base.join(&parent), inputs, depth + 1)?,
        None => {
            return Err(CliError::config(format!("unknown preset `{parent}` (built-in: {})", PRESETS.join(", "))));
        }
    };
    Ok(merge(inherited, Value::Object(map)))
}

fn merge(base: Value, over: Value) -> Value {
    match (base, over) {
        (Value::Object(mut b), Value::Object(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(old) => merge(old, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            Value::Object(b)
        }
        (_, o) => o,
    }
}

/// Output directory: the explicit override, else `output_dir`, else
/// `runs/<config name>`; relative paths go under `$QREG_OUTPUT_ROOT` if set.
pub fn output_dir(loaded: &Loaded, explicit: Option<&Path>) -> PathBuf {
    let dir = explicit
        .map(Path::to_path_buf)
        .or_else(|| loaded.config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&loaded.name));
    under_root(dir)
}

pub fn under_root(dir: PathBuf) -> PathBuf {
    if dir.is_absolute() {
        return dir;
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}
