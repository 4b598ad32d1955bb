use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};

use qreg_core::experiment::evaluate_pde;
use qreg_core::tasks::PdeBenchmark;

use crate::artifacts;
use crate::error::{CliError, CliResult};
use crate::provenance::{read_input, Provenance};

/// Dumps the dense evaluation grid of a checkpoint on `bench`.
pub fn run(checkpoint: &Path, bench: PdeBenchmark, resolution: usize, csv_path: &Path) -> CliResult<Value> {
    if resolution < 2 {
        return Err(CliError::config("resolution must be at least 2"));
    }
    let bytes = read_input(checkpoint)?;
    let model = artifacts::parse_checkpoint(&bytes)?;
    if model.input_dim() != bench.dim() {
        return Err(CliError::config(format!(
            "checkpoint takes {}-dimensional inputs, {} is {}-dimensional",
            model.input_dim(),
            bench.name(),
            bench.dim()
        )));
    }
    let config = json!({ "checkpoint": checkpoint, "benchmark": bench, "resolution": resolution });
    let mut prov = Provenance::new("export-grid", config, BTreeMap::new());
    prov.add_input(checkpoint, &bytes);
    let eval = evaluate_pde(&model, bench, resolution)?;
    let sidecar = artifacts::write_with_sidecar(csv_path, &prov, &artifacts::error_grid_csv(bench, &eval))?;
    let max_abs = eval.prediction.iter().zip(&eval.truth).map(|(p, t)| (p - t).abs()).fold(0.0, f64::max);
    Ok(json!({
        "command": "export-grid",
        "benchmark": bench,
        "resolution": resolution,
        "rows": eval.points.len(),
        "relative_l2": eval.relative_l2,
        "max_abs_error": max_abs,
        "csv": csv_path,
        "provenance": sidecar,
    }))
}
