//! Artifact writers. JSON artifacts carry a `provenance` block, run logs a
//! leading provenance record, plain-text files a `.provenance.json` sidecar.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use qreg_core::hybrid::HybridParams;
use qreg_core::optim::RunLog;
use qreg_core::tasks::{PdeBenchmark, TabularData};

use crate::config::{Loaded, Task};
use crate::error::{CliError, CliResult};
use crate::provenance::{read_input, Provenance};

pub const RUNLOG: &str = "runlog.ndjson";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const ERROR_GRID: &str = "error_grid.csv";

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// `{"provenance": …, <key>: value}`
pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, key: &str, value: &T) -> CliResult<()> {
    let doc = json!({ "provenance": prov, key: value });
    write_text(path, &(serde_json::to_string_pretty(&doc)? + "\n"))
}

pub fn write_runlog(path: &Path, prov: &Provenance, log: &RunLog) -> CliResult<()> {
    let mut log = log.clone();
    log.set_provenance(prov.tool.clone(), prov.config.clone(), prov.inputs.clone());
    write_text(path, &log.to_ndjson()?)
}

pub fn write_checkpoint(path: &Path, prov: &Provenance, model: &HybridParams) -> CliResult<()> {
    write_json(path, prov, "model", model)
}

/// Accepts a wrapped checkpoint or a bare model document.
pub fn parse_checkpoint(bytes: &[u8]) -> CliResult<HybridParams> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| CliError::config(format!("checkpoint: {e}")))?;
    let model = match value {
        Value::Object(mut m) if m.contains_key("model") => m.remove("model").unwrap_or_default(),
        v => v,
    };
    let model: HybridParams = serde_json::from_value(model).map_err(|e| CliError::config(format!("checkpoint: {e}")))?;
    model.validate().map_err(|e| CliError::config(format!("checkpoint: {e}")))?;
    Ok(model)
}

pub fn write_with_sidecar(path: &Path, prov: &Provenance, text: &str) -> CliResult<PathBuf> {
    write_text(path, text)?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".provenance.json");
    let sidecar = PathBuf::from(sidecar);
    write_text(&sidecar, &(serde_json::to_string_pretty(&json!({ "provenance": prov }))? + "\n"))?;
    Ok(sidecar)
}

/// CSV of the dense evaluation grid: coordinates, truth, prediction, |error|.
pub fn error_grid_csv(bench: PdeBenchmark, eval: &qreg_core::experiment::PdeEvaluation) -> String {
    let axes = ["x", "y", "z"];
    let mut out = axes[..bench.dim()].join(",");
    out.push_str(",u_true,u_pred,abs_error\n");
    for ((p, t), u) in eval.points.iter().zip(&eval.truth).zip(&eval.prediction) {
        // `+ 0.0` folds negative zero into zero.
        let (t, u) = (t + 0.0, u + 0.0);
        for c in p {
            out.push_str(&format!("{c},"));
        }
        out.push_str(&format!("{t},{u},{}\n", (u - t).abs()));
    }
    out
}

/// Loads the table of a tabular task and records its hash.
pub fn load_table(loaded: &Loaded, prov: &mut Provenance) -> CliResult<TabularData> {
    match loaded.task() {
        Task::Surrogate => Ok(TabularData::yacht_surrogate(loaded.config.tabular.surrogate_seed)),
        Task::File(path) => {
            let bytes = read_input(&path)?;
            prov.add_input(&path, &bytes);
            let text = String::from_utf8(bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let name = path.file_stem().map_or("table".into(), |s| s.to_string_lossy().into_owned());
            TabularData::parse(&name, &text, &loaded.config.tabular.schema()).map_err(CliError::config)
        }
        Task::Pde(b) => Err(CliError::config(format!("task `{}` is not tabular", b.name()))),
    }
}
