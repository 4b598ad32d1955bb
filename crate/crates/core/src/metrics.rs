//! Error metrics, resource-adjusted scores and report tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(predictions: &[f64], truths: &[f64]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::Dimension { what: "truth values", expected: predictions.len(), got: truths.len() });
    }
    Ok(())
}

/// `‖û − u‖₂ / ‖u‖₂`
pub fn relative_l2(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(predictions, truths)?;
    let num: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t).powi(2)).sum();
    let den: f64 = truths.iter().map(|t| t * t).sum();
    if den == 0.0 {
        return Err(Error::Invalid("relative L2 needs a nonzero reference".into()));
    }
    Ok((num / den).sqrt())
}

pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(predictions, truths)?;
    let n = predictions.len() as f64;
    Ok((predictions.iter().zip(truths).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n).sqrt())
}

/// Coarse resource proxies for one method. Exact-expectation runs count one
/// shot per circuit execution; classical runs use `shots = gates = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub wall_clock: f64,
    pub shots: u64,
    pub gates: u64,
}

impl CostProfile {
    pub fn classical(wall_clock: f64) -> Self {
        Self { wall_clock, shots: 1, gates: 1 }
    }

    /// `T̃·S·G`
    pub fn product(&self) -> f64 {
        self.wall_clock * self.shots as f64 * self.gates as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.wall_clock > 0.0 && self.shots > 0 && self.gates > 0 {
            Ok(())
        } else {
            Err(Error::Invalid(format!("cost components must be positive: {self:?}")))
        }
    }
}

pub const DEFAULT_RAE_ALPHA: f64 = 0.5;

/// `RMSE·(T̃·S·G / C0)^α`
pub fn rae(rmse: f64, cost: &CostProfile, c0: f64, alpha: f64) -> Result<f64> {
    cost.validate()?;
    if c0 <= 0.0 {
        return Err(Error::Invalid(format!("reference cost must be positive, got {c0}")));
    }
    Ok(rmse * (cost.product() / c0).powf(alpha))
}

/// `(err_ref − err_qnn) / max(1, t_qnn/t_ref)`
pub fn qcb(err_ref: f64, err_qnn: f64, t_qnn: f64, t_ref: f64) -> Result<f64> {
    if t_ref <= 0.0 {
        return Err(Error::Invalid(format!("reference time must be positive, got {t_ref}")));
    }
    Ok((err_ref - err_qnn) / (t_qnn / t_ref).max(1.0))
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    let diff = (cur - prev).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / prev.abs()
    }
}

pub const CONVERGENCE_WINDOW: usize = 10;
pub const CONVERGENCE_TOL: f64 = 0.01;

/// First 1-indexed epoch `e` such that each of the ten changes ending at `e`
/// is below 1% relative, or `None`.
pub fn convergence_epoch(history: &[f64]) -> Option<usize> {
    let mut run = 0;
    for t in 1..history.len() {
        if relative_change(history[t - 1], history[t]) < CONVERGENCE_TOL {
            run += 1;
            if run >= CONVERGENCE_WINDOW {
                return Some(t + 1);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Whether every relative change inside `window` is below `tol`.
pub fn convergence_check(window: &[f64], tol: f64) -> bool {
    window.len() >= 2 && window.windows(2).all(|w| relative_change(w[0], w[1]) < tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainTestGap {
    pub train: f64,
    pub test: f64,
    pub gap: f64,
}

pub fn train_test_gap(train_rmse: f64, test_rmse: f64) -> TrainTestGap {
    TrainTestGap { train: train_rmse, test: test_rmse, gap: test_rmse - train_rmse }
}

/// Mean and sample standard deviation (divide by `k − 1`; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// One method's results across folds or seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostProfile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_rae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qcb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_epoch: Option<f64>,
}

impl ReportRow {
    pub fn new(method: impl Into<String>, values: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&values);
        Self {
            method: method.into(),
            values,
            mean,
            std,
            cost: None,
            rae: None,
            relative_rae: None,
            qcb: None,
            convergence_epoch: None,
        }
    }

    pub fn with_cost(mut self, cost: CostProfile) -> Self {
        self.cost = Some(cost);
        self
    }
}

/// A results table in the shape of the usual mean ± std comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub metric: String,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn new(title: impl Into<String>, metric: impl Into<String>) -> Self {
        Self { title: title.into(), metric: metric.into(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    /// Fills RAE, relative RAE and QCB against the row named `reference`,
    /// whose cost product serves as `C0`.
    pub fn add_cost_columns(&mut self, reference: &str, alpha: f64) -> Result<()> {
        let r = self
            .rows
            .iter()
            .find(|r| r.method == reference)
            .ok_or_else(|| Error::Invalid(format!("reference row `{reference}` missing")))?;
        let ref_cost = r.cost.ok_or_else(|| Error::Invalid("reference row has no cost profile".into()))?;
        let ref_err = r.mean;
        let c0 = ref_cost.product();
        let ref_rae = rae(ref_err, &ref_cost, c0, alpha)?;
        for row in &mut self.rows {
            if let Some(cost) = row.cost {
                let v = rae(row.mean, &cost, c0, alpha)?;
                row.rae = Some(v);
                row.relative_rae = Some(if ref_rae > 0.0 { v / ref_rae } else { f64::NAN });
                row.qcb = Some(qcb(ref_err, row.mean, cost.wall_clock, ref_cost.wall_clock)?);
            }
        }
        Ok(())
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut header = vec!["method".to_string(), format!("{} (mean ± std)", self.metric)];
        let has = |f: fn(&ReportRow) -> bool| self.rows.iter().any(f);
        let with_rae = has(|r| r.rae.is_some());
        let with_conv = has(|r| r.convergence_epoch.is_some());
        if with_rae {
            header.extend(["RAE", "rel. RAE", "QCB"].map(String::from));
        }
        if with_conv {
            header.push("conv. epoch".into());
        }
        let opt = |v: Option<f64>, prec: usize| v.map_or("n/a".to_string(), |x| format!("{x:.prec$}"));
        let mut lines: Vec<Vec<String>> = vec![header];
        for r in &self.rows {
            let mut cells = vec![r.method.clone(), format!("{:.4e} ± {:.2e}", r.mean, r.std)];
            if with_rae {
                cells.extend([opt(r.rae, 4), opt(r.relative_rae, 2), opt(r.qcb, 4)]);
            }
            if with_conv {
                cells.push(opt(r.convergence_epoch, 0));
            }
            lines.push(cells);
        }
        let cols = lines[0].len();
        let widths: Vec<usize> =
            (0..cols).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = format!("{}\n", self.title);
        for (i, l) in lines.iter().enumerate() {
            let row: Vec<String> = l.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            out.push_str(row.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
                out.push('\n');
            }
        }
        out
    }
}
