use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use qreg_core::metrics::{mean_std, Report, ReportRow};
use qreg_core::optim::{LogRecord, RunLog};

use crate::artifacts;
use crate::error::{CliError, CliResult};
use crate::provenance::{read_input, Provenance};

/// Renders saved benchmark reports and summarizes run logs.
///
/// `.ndjson` inputs are run logs, grouped by model variant into one
/// final-loss table; `.json` inputs are `report.json` files from `benchmark`.
pub fn run(inputs: &[PathBuf], output: Option<&Path>) -> CliResult<Value> {
    if inputs.is_empty() {
        return Err(CliError::config("no inputs given"));
    }
    let config = json!({ "inputs": inputs });
    let mut prov = Provenance::new("report", config, BTreeMap::new());
    let mut reports: Vec<Report> = Vec::new();
    let mut by_variant: BTreeMap<String, Vec<RunLog>> = BTreeMap::new();
    for path in inputs {
        let bytes = read_input(path)?;
        prov.add_input(path, &bytes);
        let text = String::from_utf8(bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "ndjson") {
            let log = RunLog::from_ndjson(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            by_variant.entry(variant_of(&log)).or_default().push(log);
        } else {
            reports.extend(parse_reports(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?);
        }
    }
    if !by_variant.is_empty() {
        reports.push(log_report(&by_variant));
    }
    let text: String = reports.iter().map(|r| r.to_table() + "\n").collect();
    match output {
        Some(path) => {
            artifacts::write_with_sidecar(path, &prov, &text)?;
        }
        None => eprint!("{text}"),
    }
    Ok(json!({
        "command": "report",
        "inputs": inputs,
        "output": output,
        "reports": reports,
    }))
}

fn variant_of(log: &RunLog) -> String {
    log.records
        .iter()
        .find_map(|r| match r {
            LogRecord::Header { variant, .. } => Some(variant.name().to_string()),
            _ => None,
        })
        .unwrap_or_else(|| "unknown".into())
}

fn parse_reports(text: &str) -> Result<Vec<Report>, serde_json::Error> {
    let value: Value = serde_json::from_str(text)?;
    match value {
        Value::Object(mut m) if m.contains_key("reports") => serde_json::from_value(m.remove("reports").unwrap_or_default()),
        v => Ok(vec![serde_json::from_value(v)?]),
    }
}

fn log_report(by_variant: &BTreeMap<String, Vec<RunLog>>) -> Report {
    let mut report = Report::new("run logs (final training loss)", "final loss");
    for (variant, logs) in by_variant {
        let summaries: Vec<_> = logs.iter().filter_map(RunLog::summary).collect();
        let mut row = ReportRow::new(variant.clone(), summaries.iter().map(|s| s.final_loss).collect());
        let epochs: Vec<f64> = summaries.iter().filter_map(|s| s.convergence_epoch.map(|e| e as f64)).collect();
        if !epochs.is_empty() {
            row.convergence_epoch = Some(mean_std(&epochs).0);
        }
        report.push(row);
    }
    report
}
