use std::path::Path;

use serde_json::{json, Value};

use qreg_core::tasks::kfold;

use crate::artifacts;
use crate::config::{Loaded, Task};
use crate::error::CliResult;
use crate::provenance::Provenance;
use crate::runs::{self, FoldJob, PdeJob};

/// Trains `variant` once per seed. PDE runs also dump the error grid.
pub fn run(loaded: &Loaded, out: &Path) -> CliResult<Value> {
    let cfg = &loaded.config;
    let mut prov = Provenance::new("train", loaded.resolved.clone(), loaded.inputs.clone());
    let seed_dir = |s: u64| out.join(format!("seed-{s}"));
    let records = match loaded.task() {
        Task::Pde(bench) => {
            runs::check_model(cfg.variant, bench.dim(), &cfg.model)?;
            runs::for_each(&cfg.seeds, cfg.parallel_seeds, |&seed| {
                let job = PdeJob {
                    bench,
                    variant: cfg.variant,
                    seed,
                    pde: &cfg.pde,
                    model: &cfg.model,
                    curriculum: &cfg.curriculum,
                    measurement: cfg.measurement(),
                    dir: seed_dir(seed),
                    export_grid: true,
                };
                runs::pde_run(&job, &prov)
            })
        }
        _ => {
            let data = artifacts::load_table(loaded, &mut prov)?;
            runs::check_model(cfg.variant, data.dim(), &cfg.model)?;
            let t = &cfg.tabular;
            let folds = kfold(data.len(), t.folds, t.fold_seed)?;
            let fold = &folds[t.fold];
            let prov = &prov;
            runs::for_each(&cfg.seeds, cfg.parallel_seeds, |&seed| {
                let job = FoldJob {
                    data: &data,
                    fold_index: t.fold,
                    fold,
                    variant: cfg.variant,
                    seed,
                    model: &cfg.model,
                    curriculum: &cfg.curriculum,
                    measurement: cfg.measurement(),
                    dir: seed_dir(seed),
                };
                runs::fold_run(&job, prov)
            })
        }
    };
    let records = records.into_iter().collect::<CliResult<Vec<_>>>()?;
    artifacts::write_json(&out.join("summary.json"), &prov, "runs", &records)?;
    Ok(json!({
        "command": "train",
        "task": cfg.task,
        "variant": cfg.variant,
        "config_hash": prov.config_hash(),
        "output_dir": out,
        "runs": records,
    }))
}
