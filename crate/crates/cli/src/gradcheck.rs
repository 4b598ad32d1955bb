use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use qreg_core::experiment::{build_model, ModelConfig};
use qreg_core::grad::{compare_gradients, finite_difference_gradient, loss_gradient};
use qreg_core::hybrid::HybridParams;
use qreg_core::qsim::Backend;
use qreg_core::tasks::{Objective, SupervisedData};

use crate::artifacts;
use crate::config::{GradcheckConfig, Loaded, GRADCHECK_MAX_PARAMS};
use crate::error::{CliError, CliResult};
use crate::provenance::Provenance;

/// Small random model and regression batch for the check.
pub fn fixture(g: &GradcheckConfig) -> CliResult<(HybridParams, Objective)> {
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let xs: Vec<Vec<f64>> = (0..g.samples).map(|_| (0..g.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let ys: Vec<f64> = (0..g.samples).map(|_| rng.gen_range(0.0..1.0)).collect();
    let cfg = ModelConfig { n_qubits: g.n_qubits, hidden: g.hidden.clone(), ..Default::default() };
    let mut model = build_model(g.variant, g.input_dim, &cfg, &xs, g.seed).map_err(CliError::config)?;
    if let Some(a) = &model.ansatz {
        let mut a = a.clone();
        while a.depth < g.depth {
            // Random new layers so every coordinate has a nonzero gradient.
            a = a.grow_layer(1.0, g.depth, &mut rng).map_err(CliError::config)?;
        }
        model.ansatz = Some(a);
    }
    let n = model.num_params();
    if n > GRADCHECK_MAX_PARAMS {
        return Err(CliError::config(format!("gradcheck model has {n} parameters, limit is {GRADCHECK_MAX_PARAMS}")));
    }
    let objective = Objective::Supervised(SupervisedData::new(xs, ys)?);
    Ok((model, objective))
}

/// Returns the summary and whether every block is within tolerance.
pub fn run(loaded: &Loaded, g: &GradcheckConfig, out: &Path) -> CliResult<(Value, bool)> {
    let mut resolved = loaded.resolved.clone();
    resolved["gradcheck"] = serde_json::to_value(g)?;
    let prov = Provenance::new("gradcheck", resolved, loaded.inputs.clone());
    let (model, objective) = fixture(g)?;
    let backend = Backend::exact();
    let (loss, grad) = loss_gradient(&model, &objective, &backend)?;
    let mut analytic = grad.values;
    if g.corrupt_gradient_sign {
        log::warn!("fault injection: analytic gradient sign flipped");
        analytic.iter_mut().for_each(|v| *v = -*v);
    }
    let fd = finite_difference_gradient(&model, &objective, &backend, g.step)?;
    let report = compare_gradients(&model, &analytic, &fd, g.step);
    let passed = report.passes(g.tolerance);
    let blocks: Vec<Value> = report
        .blocks
        .iter()
        .map(|b| {
            json!({
                "block": b.block,
                "params": b.params,
                "max_relative_error": b.max_relative_error.map_or(json!("n/a"), |e| json!(e)),
            })
        })
        .collect();
    artifacts::write_json(&out.join("gradcheck.json"), &prov, "report", &report)?;
    for b in &report.blocks {
        let e = b.max_relative_error.map_or("n/a".into(), |e| format!("{e:.3e}"));
        eprintln!("{:<10} {:>4} params  max relative error {e}", b.block, b.params);
    }
    let summary = json!({
        "command": "gradcheck",
        "variant": g.variant,
        "params": model.num_params(),
        "loss": loss,
        "step": g.step,
        "tolerance": g.tolerance,
        "blocks": blocks,
        "max_relative_error": report.max_relative_error(),
        "passed": passed,
        "config_hash": prov.config_hash(),
        "output_dir": out,
    });
    Ok((summary, passed))
}
