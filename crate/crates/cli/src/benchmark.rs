use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use qreg_core::hybrid::ModelVariant;
use qreg_core::metrics::{mean_std, CostProfile, Report, ReportRow};
use qreg_core::optim::CurriculumConfig;
use qreg_core::tasks::{kfold, Fold, TabularData};

use crate::artifacts;
use crate::config::{Loaded, Task};
use crate::error::{CliError, CliResult};
use crate::provenance::Provenance;
use crate::runs::{self, FoldJob, PdeJob, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Every configured PDE benchmark × variant × seed.
    Pde,
    /// k-fold comparison of the variants on a table.
    Tabular,
    /// Two-stage against single-stage optimization on a table.
    Ablation,
}

pub fn run(loaded: &Loaded, suite: Suite, out: &Path) -> CliResult<Value> {
    let mut prov = Provenance::new("benchmark", loaded.resolved.clone(), loaded.inputs.clone());
    let (reports, records) = match suite {
        Suite::Pde => pde_suite(loaded, &prov, out)?,
        Suite::Tabular | Suite::Ablation => {
            if let Task::Pde(b) = loaded.task() {
                let name = format!("{suite:?}").to_lowercase();
                return Err(CliError::config(format!("suite `{name}` needs a tabular task, got `{}`", b.name())));
            }
            let data = artifacts::load_table(loaded, &mut prov)?;
            if suite == Suite::Tabular {
                tabular_suite(loaded, &data, &prov, out)?
            } else {
                ablation_suite(loaded, &data, &prov, out)?
            }
        }
    };
    let mut text: String = reports.iter().map(|r| r.to_table() + "\n").collect();
    if suite == Suite::Pde {
        text.push_str(&pde_overview(&reports, &loaded.config.variants));
    }
    artifacts::write_text(&out.join("report.txt"), &text)?;
    artifacts::write_json(&out.join("report.json"), &prov, "reports", &reports)?;
    artifacts::write_json(&out.join("runs.json"), &prov, "runs", &records)?;
    eprint!("{text}");
    Ok(json!({
        "command": "benchmark",
        "suite": suite,
        "config_hash": prov.config_hash(),
        "output_dir": out,
        "reports": reports,
    }))
}

/// Mean cost over runs; the gate count is the largest seen.
fn mean_cost(records: &[RunRecord]) -> Option<CostProfile> {
    let costs: Vec<CostProfile> = records.iter().filter_map(|r| r.cost).collect();
    if costs.is_empty() {
        return None;
    }
    let n = costs.len() as f64;
    Some(CostProfile {
        wall_clock: costs.iter().map(|c| c.wall_clock).sum::<f64>() / n,
        shots: (costs.iter().map(|c| c.shots as f64).sum::<f64>() / n).round() as u64,
        gates: costs.iter().map(|c| c.gates).max().unwrap_or(1),
    })
}

/// Mean over runs that reached the convergence criterion.
fn mean_convergence(records: &[RunRecord]) -> Option<f64> {
    let defined: Vec<f64> = records.iter().filter_map(|r| r.convergence_epoch.map(|e| e as f64)).collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

fn cost_columns(report: &mut Report, reference: ModelVariant, alpha: f64) -> CliResult<()> {
    if report.rows.iter().any(|r| r.method == reference.name()) {
        report.add_cost_columns(reference.name(), alpha)?;
    }
    Ok(())
}

fn pde_suite(loaded: &Loaded, prov: &Provenance, out: &Path) -> CliResult<(Vec<Report>, Vec<RunRecord>)> {
    let cfg = &loaded.config;
    for bench in &cfg.benchmarks {
        for v in &cfg.variants {
            runs::check_model(*v, bench.dim(), &cfg.model)?;
        }
    }
    let mut reports = Vec::new();
    let mut all = Vec::new();
    for &bench in &cfg.benchmarks {
        let mut report = Report::new(format!("{} (relative L2 over seeds)", bench.name()), "relative L2");
        for &variant in &cfg.variants {
            let records = runs::for_each(&cfg.seeds, cfg.parallel_seeds, |&seed| {
                let job = PdeJob {
                    bench,
                    variant,
                    seed,
                    pde: &cfg.pde,
                    model: &cfg.model,
                    curriculum: &cfg.curriculum,
                    measurement: cfg.measurement(),
                    dir: out.join(bench.name()).join(variant.name()).join(format!("seed-{seed}")),
                    export_grid: false,
                };
                runs::pde_run(&job, prov)
            });
            let records = records.into_iter().collect::<CliResult<Vec<_>>>()?;
            let values = records.iter().filter_map(|r| r.relative_l2).collect();
            let mut row = ReportRow::new(variant.name(), values);
            if let Some(c) = mean_cost(&records) {
                row = row.with_cost(c);
            }
            report.push(row);
            all.extend(records);
        }
        cost_columns(&mut report, cfg.reference, cfg.rae_alpha)?;
        reports.push(report);
    }
    Ok((reports, all))
}

/// One line per benchmark, one column per variant.
fn pde_overview(reports: &[Report], variants: &[ModelVariant]) -> String {
    let mut lines = vec![std::iter::once("benchmark".to_string()).chain(variants.iter().map(|v| v.name().to_string())).collect::<Vec<_>>()];
    for r in reports {
        let name = r.title.split_whitespace().next().unwrap_or_default().to_string();
        let mut line = vec![name];
        for v in variants {
            let cell = r.rows.iter().find(|row| row.method == v.name()).map_or("n/a".into(), |row| format!("{:.3e} ± {:.1e}", row.mean, row.std));
            line.push(cell);
        }
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len()).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::from("relative L2 by benchmark (mean ± std over seeds)\n");
    for l in &lines {
        let cells: Vec<String> = l.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn folds_for(loaded: &Loaded, data: &TabularData) -> CliResult<Vec<Fold>> {
    let t = &loaded.config.tabular;
    let mut folds = kfold(data.len(), t.folds, t.fold_seed)?;
    folds.truncate(t.max_folds.unwrap_or(t.folds));
    Ok(folds)
}

/// Runs every fold × seed for one method; records come back fold-major.
#[allow(clippy::too_many_arguments)]
fn fold_records(
    loaded: &Loaded,
    data: &TabularData,
    folds: &[Fold],
    variant: ModelVariant,
    curriculum: &CurriculumConfig,
    method: &str,
    prov: &Provenance,
    out: &Path,
) -> CliResult<Vec<RunRecord>> {
    let cfg = &loaded.config;
    let mut records = Vec::new();
    for (k, fold) in folds.iter().enumerate() {
        let batch = runs::for_each(&cfg.seeds, cfg.parallel_seeds, |&seed| {
            let job = FoldJob {
                data,
                fold_index: k,
                fold,
                variant,
                seed,
                model: &cfg.model,
                curriculum,
                measurement: cfg.measurement(),
                dir: out.join(method).join(format!("fold-{k}")).join(format!("seed-{seed}")),
            };
            runs::fold_run(&job, prov)
        });
        records.extend(batch.into_iter().collect::<CliResult<Vec<_>>>()?);
    }
    Ok(records)
}

/// Per-fold means over seeds, so the spread is over folds.
fn per_fold(records: &[RunRecord], folds: usize, pick: impl Fn(&RunRecord) -> Option<f64>) -> Vec<f64> {
    (0..folds)
        .map(|k| {
            let v: Vec<f64> = records.iter().filter(|r| r.fold == Some(k)).filter_map(&pick).collect();
            mean_std(&v).0
        })
        .collect()
}

fn tabular_suite(loaded: &Loaded, data: &TabularData, prov: &Provenance, out: &Path) -> CliResult<(Vec<Report>, Vec<RunRecord>)> {
    let cfg = &loaded.config;
    for v in &cfg.variants {
        runs::check_model(*v, data.dim(), &cfg.model)?;
    }
    let folds = folds_for(loaded, data)?;
    let mut test = Report::new(format!("{} (test RMSE over {} folds)", data.name, folds.len()), "test RMSE");
    let mut train = Report::new(format!("{} (train RMSE over {} folds)", data.name, folds.len()), "train RMSE");
    let mut all = Vec::new();
    for &variant in &cfg.variants {
        let records = fold_records(loaded, data, &folds, variant, &cfg.curriculum, variant.name(), prov, out)?;
        let mut row = ReportRow::new(variant.name(), per_fold(&records, folds.len(), |r| r.test_rmse));
        row.convergence_epoch = mean_convergence(&records);
        if let Some(c) = mean_cost(&records) {
            row = row.with_cost(c);
        }
        test.push(row);
        train.push(ReportRow::new(variant.name(), per_fold(&records, folds.len(), |r| r.train_rmse)));
        all.extend(records);
    }
    cost_columns(&mut test, cfg.reference, cfg.rae_alpha)?;
    Ok((vec![test, train], all))
}

fn ablation_suite(loaded: &Loaded, data: &TabularData, prov: &Provenance, out: &Path) -> CliResult<(Vec<Report>, Vec<RunRecord>)> {
    let cfg = &loaded.config;
    runs::check_model(cfg.variant, data.dim(), &cfg.model)?;
    let folds = folds_for(loaded, data)?;
    let mut report = Report::new(
        format!("{} optimization ablation ({}, {} fold(s) × {} seed(s))", data.name, cfg.variant.name(), folds.len(), cfg.seeds.len()),
        "test RMSE",
    );
    let mut all = Vec::new();
    for &strategy in &cfg.strategies {
        let curriculum = strategy.apply(&cfg.curriculum);
        let records = fold_records(loaded, data, &folds, cfg.variant, &curriculum, strategy.name(), prov, out)?;
        let mut row = ReportRow::new(strategy.name(), records.iter().filter_map(|r| r.test_rmse).collect());
        row.convergence_epoch = mean_convergence(&records);
        report.push(row);
        all.extend(records);
    }
    Ok((vec![report], all))
}

