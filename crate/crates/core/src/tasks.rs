//! Training objectives: supervised MSE regression, the four Dirichlet PDE
//! benchmarks on `[-1, 1]^d`, grids, and delimiter-separated tabular data with
//! k-fold splits.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{boundary_factor, HybridParams, LocalDerivatives, Stencil, DEFAULT_FD_STEP};
use crate::qsim::Backend;

pub const CONVDIFF_EPSILON: f64 = 0.1;
pub const CONVDIFF_VELOCITY: [f64; 2] = [3.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdeBenchmark {
    /// `−Δu = f`, `u = sin(πx)sin(πy)`
    Poisson2d,
    /// `−Δu + u³ = f`, `u = sin(2πx)sin(3πy)`
    Nonlinear2d,
    /// `v·∇u − εΔu = f`, `u = sin(2πx)sin(2πy)`
    ConvDiff2d,
    /// `−Δu + u = f`, `u = sin(πx)sin(πy)sin(πz)`
    Helmholtz3d,
}

/// `sin(πt)`, exactly zero at integer `t` so solutions vanish on the faces.
fn sin_pi(t: f64) -> f64 {
    if t.fract() == 0.0 {
        0.0
    } else {
        (PI * t).sin()
    }
}

impl PdeBenchmark {
    pub const ALL: [PdeBenchmark; 4] =
        [PdeBenchmark::Poisson2d, PdeBenchmark::Nonlinear2d, PdeBenchmark::ConvDiff2d, PdeBenchmark::Helmholtz3d];

    pub fn name(self) -> &'static str {
        match self {
            PdeBenchmark::Poisson2d => "poisson2d",
            PdeBenchmark::Nonlinear2d => "nonlinear2d",
            PdeBenchmark::ConvDiff2d => "convdiff2d",
            PdeBenchmark::Helmholtz3d => "helmholtz3d",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            PdeBenchmark::Helmholtz3d => 3,
            _ => 2,
        }
    }

    pub fn velocity(self) -> Option<[f64; 2]> {
        (self == PdeBenchmark::ConvDiff2d).then_some(CONVDIFF_VELOCITY)
    }

    pub fn solution(self, x: &[f64]) -> f64 {
        let s = |k: f64, v: f64| sin_pi(k * v);
        match self {
            PdeBenchmark::Poisson2d => s(1.0, x[0]) * s(1.0, x[1]),
            PdeBenchmark::Nonlinear2d => s(2.0, x[0]) * s(3.0, x[1]),
            PdeBenchmark::ConvDiff2d => s(2.0, x[0]) * s(2.0, x[1]),
            PdeBenchmark::Helmholtz3d => s(1.0, x[0]) * s(1.0, x[1]) * s(1.0, x[2]),
        }
    }

    pub fn forcing(self, x: &[f64]) -> f64 {
        let pi2 = PI * PI;
        match self {
            PdeBenchmark::Poisson2d => 2.0 * pi2 * self.solution(x),
            PdeBenchmark::Nonlinear2d => {
                let u = self.solution(x);
                13.0 * pi2 * u + u.powi(3)
            }
            PdeBenchmark::ConvDiff2d => {
                let (a, b) = (2.0 * PI * x[0], 2.0 * PI * x[1]);
                6.0 * PI * (a.cos() * b.sin() + a.sin() * b.cos()) + 0.8 * pi2 * a.sin() * b.sin()
            }
            PdeBenchmark::Helmholtz3d => (3.0 * pi2 + 1.0) * self.solution(x),
        }
    }

    /// `N[u]` from local derivatives.
    pub fn operator(self, d: &LocalDerivatives) -> f64 {
        match self {
            PdeBenchmark::Poisson2d => -d.laplacian,
            PdeBenchmark::Nonlinear2d => -d.laplacian + d.value.powi(3),
            PdeBenchmark::ConvDiff2d => {
                let v = CONVDIFF_VELOCITY;
                v[0] * d.gradient[0] + v[1] * d.gradient[1] - CONVDIFF_EPSILON * d.laplacian
            }
            PdeBenchmark::Helmholtz3d => -d.laplacian + d.value,
        }
    }

    /// Partial derivatives of `N` with respect to `(u, ∇u, Δu)`.
    pub fn operator_partials(self, d: &LocalDerivatives) -> (f64, Vec<f64>, f64) {
        let zeros = vec![0.0; self.dim()];
        match self {
            PdeBenchmark::Poisson2d => (0.0, zeros, -1.0),
            PdeBenchmark::Nonlinear2d => (3.0 * d.value * d.value, zeros, -1.0),
            PdeBenchmark::ConvDiff2d => (0.0, CONVDIFF_VELOCITY.to_vec(), -CONVDIFF_EPSILON),
            PdeBenchmark::Helmholtz3d => (1.0, zeros, -1.0),
        }
    }
}

impl fmt::Display for PdeBenchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PdeBenchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown PDE benchmark `{s}`")))
    }
}

pub fn forcing(bench: PdeBenchmark, x: &[f64]) -> f64 {
    bench.forcing(x)
}

pub fn analytic_solution(bench: PdeBenchmark, x: &[f64]) -> f64 {
    bench.solution(x)
}

/// `(1/2N)·Σ(ŷ_i − y_i)²`
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::Dimension { what: "targets", expected: predictions.len(), got: targets.len() });
    }
    let n = predictions.len() as f64;
    Ok(predictions.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / (2.0 * n))
}

fn tensor_grid(axis: &[f64], dim: usize) -> Vec<Vec<f64>> {
    let total = axis.len().pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let mut p = vec![0.0; dim];
            for slot in p.iter_mut().rev() {
                *slot = axis[idx % axis.len()];
                idx /= axis.len();
            }
            p
        })
        .collect()
}

/// Cell-centred interior grid: `n` points per axis at `−1 + s/2 + k·s`, `s = 2/n`.
pub fn collocation_grid(dim: usize, n: usize, h: f64) -> Result<Vec<Vec<f64>>> {
    let s = 2.0 / n as f64;
    if n < 3 || s / 2.0 < 2.0 * h {
        return Err(Error::Resolution(n));
    }
    let axis: Vec<f64> = (0..n).map(|k| -1.0 + s / 2.0 + k as f64 * s).collect();
    Ok(tensor_grid(&axis, dim))
}

/// Vertex grid `linspace(−1, 1, n)` per axis, boundary included.
pub fn evaluation_grid(dim: usize, n: usize) -> Result<Vec<Vec<f64>>> {
    if n < 3 {
        return Err(Error::Resolution(n));
    }
    let axis: Vec<f64> = (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect();
    Ok(tensor_grid(&axis, dim))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub collocation: Vec<Vec<f64>>,
    pub evaluation: Vec<Vec<f64>>,
}

pub fn make_grids(bench: PdeBenchmark, training_resolution: usize, eval_resolution: usize) -> Result<Grids> {
    Ok(Grids {
        collocation: collocation_grid(bench.dim(), training_resolution, DEFAULT_FD_STEP)?,
        evaluation: evaluation_grid(bench.dim(), eval_resolution)?,
    })
}

/// `(1/2N)·Σ(N[u](x_m) − f(x_m))²` for any field `u`, derivatives by central differences.
pub fn pde_residual_loss_with(
    field: impl Fn(&[f64]) -> Result<f64>,
    bench: PdeBenchmark,
    collocation: &[Vec<f64>],
    h: f64,
) -> Result<f64> {
    if collocation.is_empty() {
        return Err(Error::Empty("collocation points"));
    }
    let stencil = Stencil::new(bench.dim(), h);
    let mut total = 0.0;
    for x in collocation {
        stencil.check(x)?;
        let values = stencil.points(x).iter().map(|p| field(p)).collect::<Result<Vec<_>>>()?;
        let r = bench.operator(&stencil.derivatives(&values)) - bench.forcing(x);
        total += r * r;
    }
    Ok(total / (2.0 * collocation.len() as f64))
}

/// Residual loss of the hard-constrained model surrogate.
pub fn pde_residual_loss(
    params: &HybridParams,
    backend: &Backend,
    bench: PdeBenchmark,
    collocation: &[Vec<f64>],
    h: f64,
) -> Result<f64> {
    pde_residual_loss_with(|p| params.predict_pde(p, backend), bench, collocation, h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedData {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl SupervisedData {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        let first = inputs.first().ok_or(Error::Empty("supervised inputs"))?;
        if inputs.len() != targets.len() {
            return Err(Error::Dimension { what: "targets", expected: inputs.len(), got: targets.len() });
        }
        if let Some(bad) = inputs.iter().find(|x| x.len() != first.len()) {
            return Err(Error::Dimension { what: "input row", expected: first.len(), got: bad.len() });
        }
        Ok(Self { inputs, targets })
    }
}

/// PDE residual objective with precomputed stencil points and boundary factors.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeProblem {
    bench: PdeBenchmark,
    collocation: Vec<Vec<f64>>,
    stencil: Stencil,
    points: Vec<Vec<f64>>,
    factors: Vec<f64>,
}

impl PdeProblem {
    pub fn new(bench: PdeBenchmark, collocation: Vec<Vec<f64>>, h: f64) -> Result<Self> {
        if collocation.is_empty() {
            return Err(Error::Empty("collocation points"));
        }
        let stencil = Stencil::new(bench.dim(), h);
        let mut points = Vec::with_capacity(collocation.len() * stencil.len());
        for x in &collocation {
            stencil.check(x)?;
            points.extend(stencil.points(x));
        }
        let factors = points.iter().map(|p| boundary_factor(p)).collect();
        Ok(Self { bench, collocation, stencil, points, factors })
    }

    pub fn bench(&self) -> PdeBenchmark {
        self.bench
    }

    pub fn collocation(&self) -> &[Vec<f64>] {
        &self.collocation
    }

    pub fn step(&self) -> f64 {
        self.stencil.h
    }

    fn residuals(&self, raw: &[f64]) -> impl Iterator<Item = (usize, LocalDerivatives, f64)> + '_ {
        let k = self.stencil.len();
        let hard: Vec<f64> = raw.iter().zip(&self.factors).map(|(r, f)| r * f).collect();
        self.collocation.iter().enumerate().map(move |(m, x)| {
            let d = self.stencil.derivatives(&hard[m * k..(m + 1) * k]);
            let r = self.bench.operator(&d) - self.bench.forcing(x);
            (m, d, r)
        })
    }
}

/// What the optimizer minimizes. Both kinds reduce to evaluating the raw model
/// output `ŷ` at a fixed list of points and combining the values.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Supervised(SupervisedData),
    Pde(PdeProblem),
}

impl Objective {
    pub fn input_dim(&self) -> usize {
        match self {
            Objective::Supervised(s) => s.inputs[0].len(),
            Objective::Pde(p) => p.bench.dim(),
        }
    }

    /// Points at which the raw model output is needed.
    pub fn eval_points(&self) -> &[Vec<f64>] {
        match self {
            Objective::Supervised(s) => &s.inputs,
            Objective::Pde(p) => &p.points,
        }
    }

    /// Inputs whose statistics fix the pure-circuit encoding.
    pub fn encoding_inputs(&self) -> &[Vec<f64>] {
        match self {
            Objective::Supervised(s) => &s.inputs,
            Objective::Pde(p) => &p.collocation,
        }
    }

    fn check_len(&self, raw: &[f64]) -> Result<()> {
        let n = self.eval_points().len();
        if raw.len() != n {
            return Err(Error::Dimension { what: "raw predictions", expected: n, got: raw.len() });
        }
        Ok(())
    }

    pub fn loss(&self, raw: &[f64]) -> Result<f64> {
        self.check_len(raw)?;
        let loss = match self {
            Objective::Supervised(s) => mse_loss(raw, &s.targets)?,
            Objective::Pde(p) => {
                p.residuals(raw).map(|(_, _, r)| r * r).sum::<f64>() / (2.0 * p.collocation.len() as f64)
            }
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        Ok(loss)
    }

    /// Loss and `dL/dŷ` at every evaluation point.
    pub fn loss_and_upstream(&self, raw: &[f64]) -> Result<(f64, Vec<f64>)> {
        let loss = self.loss(raw)?;
        let upstream = match self {
            Objective::Supervised(s) => {
                let n = raw.len() as f64;
                raw.iter().zip(&s.targets).map(|(p, t)| (p - t) / n).collect()
            }
            Objective::Pde(p) => {
                let k = p.stencil.len();
                let n = p.collocation.len() as f64;
                let mut up = vec![0.0; raw.len()];
                for (m, d, r) in p.residuals(raw) {
                    let (dv, dg, dl) = p.bench.operator_partials(&d);
                    let w = p.stencil.pullback(dv, &dg, dl);
                    for (i, wi) in w.iter().enumerate() {
                        up[m * k + i] = r / n * wi * p.factors[m * k + i];
                    }
                }
                up
            }
        };
        Ok((loss, upstream))
    }
}

/// Held-out data monitored during training. The metric is RMSE multiplied by
/// `scale`, which turns unit-interval targets back into original units.
#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub scale: f64,
}

/// Per-feature z-scoring. Constant features are only centred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let d = rows.first().ok_or(Error::Empty("feature rows"))?.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            mean.iter_mut().zip(r.iter()).for_each(|(m, v)| *m += v / n);
        }
        let mut std = vec![0.0; d];
        for r in rows {
            std.iter_mut().zip(r.iter()).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
        }
        for (j, s) in std.iter_mut().enumerate() {
            if *s > 0.0 {
                *s = s.sqrt();
            } else {
                log::warn!("feature {j} is constant on the training rows; centring only");
                *s = 1.0;
            }
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }
}

/// Min-max scaling of the target onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub min: f64,
    pub max: f64,
}

impl TargetScaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("targets"));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { min, max })
    }

    pub fn range(&self) -> f64 {
        if self.max > self.min {
            self.max - self.min
        } else {
            1.0
        }
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.min) / self.range()
    }

    pub fn invert(&self, t: f64) -> f64 {
        t * self.range() + self.min
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle split into `k` folds; the first `n mod k` folds get one extra row.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || k > n {
        return Err(Error::Invalid(format!("cannot split {n} rows into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let test: Vec<usize> = order[start..start + size].to_vec();
        let train: Vec<usize> = order[..start].iter().chain(&order[start + size..]).copied().collect();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}

/// How to read a delimiter-separated numeric file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularSchema {
    /// Target column; defaults to the last one.
    pub target_column: Option<usize>,
    /// Number of leading lines to skip.
    pub header_lines: usize,
}

/// Raw numeric table with the target split off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularData {
    pub name: String,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

/// One fold after normalization with training-fold statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldData {
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<f64>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<f64>,
    pub features: Standardizer,
    pub target: TargetScaler,
}

impl FoldData {
    pub fn train_objective(&self) -> Result<Objective> {
        Ok(Objective::Supervised(SupervisedData::new(self.train_x.clone(), self.train_y.clone())?))
    }

    pub fn test_validation(&self) -> Validation {
        Validation { inputs: self.test_x.clone(), targets: self.test_y.clone(), scale: self.target.range() }
    }
}

impl TabularData {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn parse(name: &str, text: &str, schema: &TabularSchema) -> Result<Self> {
        let mut features = Vec::new();
        let mut targets = Vec::new();
        let mut width = None;
        for (i, line) in text.lines().enumerate().skip(schema.header_lines) {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { path: name.to_string(), line: line_no, msg };
            let row = line
                .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| err(format!("`{t}` is not a number"))))
                .collect::<Result<Vec<_>>>()?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(err("non-finite value".into()));
            }
            let w = *width.get_or_insert(row.len());
            if row.len() != w {
                return Err(err(format!("expected {w} columns, found {}", row.len())));
            }
            if w < 2 {
                return Err(err("need at least one feature and a target".into()));
            }
            let t = schema.target_column.unwrap_or(w - 1);
            if t >= w {
                return Err(err(format!("target column {t} out of range")));
            }
            targets.push(row[t]);
            features.push(row.iter().enumerate().filter(|&(j, _)| j != t).map(|(_, v)| *v).collect());
        }
        if targets.is_empty() {
            return Err(Error::Empty("tabular file"));
        }
        Ok(Self { name: name.to_string(), features, targets })
    }

    pub fn load(path: &Path, schema: &TabularSchema) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&path.display().to_string(), &text, schema)
    }

    /// Yacht-hydrodynamics-shaped synthetic table (308 rows, 6 features):
    /// 22 hull forms at 14 Froude numbers, with residuary resistance growing
    /// roughly exponentially in the Froude number as in towing-tank data.
    pub fn yacht_surrogate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::with_capacity(308);
        let mut targets = Vec::with_capacity(308);
        for _ in 0..22 {
            let lcb = rng.gen_range(-5.0..0.0);
            let cp = rng.gen_range(0.53..0.60);
            let ld = rng.gen_range(4.34..5.14);
            let bd = rng.gen_range(2.81..5.35);
            let lb = rng.gen_range(2.73..3.64);
            let hull = 1.0 + 2.5 * (cp - 0.565) - 0.35 * (ld - 4.74) + 0.04 * (bd - 4.08) - 0.12 * (lb - 3.18)
                + 0.02 * (lcb + 2.5);
            for k in 0..14 {
                let fr = 0.125 + 0.025 * k as f64;
                let base = 0.25 * ((16.8 * (fr - 0.125)).exp() - 0.9);
                let noise = 1.0 + 0.02 * rng.gen_range(-1.0..1.0);
                features.push(vec![lcb, cp, ld, bd, lb, fr]);
                targets.push((hull * base * noise).max(0.01));
            }
        }
        Self { name: "yacht-surrogate".into(), features, targets }
    }

    pub fn load_tabular(path: &Path, schema: &TabularSchema) -> Result<Self> {
        Self::load(path, schema)
    }

    pub fn split(&self, fold: &Fold) -> Result<FoldData> {
        let rows: Vec<&[f64]> = fold.train.iter().map(|&i| self.features[i].as_slice()).collect();
        let features = Standardizer::fit(&rows)?;
        let raw_y: Vec<f64> = fold.train.iter().map(|&i| self.targets[i]).collect();
        let target = TargetScaler::fit(&raw_y)?;
        let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
            idx.iter().map(|&i| (features.apply(&self.features[i]), target.apply(self.targets[i]))).unzip()
        };
        let (train_x, train_y) = pick(&fold.train);
        let (test_x, test_y) = pick(&fold.test);
        Ok(FoldData { train_x, train_y, test_x, test_y, features, target })
    }
}

pub fn load_tabular(path: &Path, schema: &TabularSchema) -> Result<TabularData> {
    TabularData::load(path, schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{field_derivatives, ModelShape, ModelVariant};

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[2.0], &[0.0]).unwrap(), 2.0);
        assert_eq!(mse_loss(&[1.0; 4], &[0.0; 4]).unwrap(), 0.5);
        assert!(matches!(mse_loss(&[], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn forcing_and_solution_examples() {
        let p = PdeBenchmark::Poisson2d;
        assert!((p.forcing(&[0.5, 0.5]) - 2.0 * PI * PI).abs() < 1e-12);
        assert!((p.forcing(&[0.5, 0.5]) - 19.739).abs() < 1e-3);
        assert!((p.solution(&[0.5, 0.5]) - 1.0).abs() < 1e-15);
        assert_eq!(PdeBenchmark::ConvDiff2d.forcing(&[0.0, 0.0]), 0.0);
        let h = PdeBenchmark::Helmholtz3d.forcing(&[0.5, 0.5, 0.5]);
        assert!((h - 30.608).abs() < 1e-3);
        assert!((PdeBenchmark::Nonlinear2d.solution(&[0.25, 1.0 / 6.0]) - 1.0).abs() < 1e-12);
        for b in PdeBenchmark::ALL {
            let mut x = vec![0.3; b.dim()];
            x[0] = 1.0;
            assert!(b.solution(&x).abs() < 1e-15);
            assert_eq!(b.name().parse::<PdeBenchmark>().unwrap(), b);
        }
    }

    #[test]
    fn forcing_matches_operator_on_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for b in PdeBenchmark::ALL {
            for _ in 0..100 {
                let x: Vec<f64> = (0..b.dim()).map(|_| rng.gen_range(-0.99..0.99)).collect();
                let d = field_derivatives(|p| Ok(b.solution(p)), &x, 1e-4).unwrap();
                let err = (b.operator(&d) - b.forcing(&x)).abs();
                assert!(err <= 1e-4, "{b} at {x:?}: {err}");
            }
        }
    }

    #[test]
    fn analytic_surrogate_has_tiny_residual() {
        for b in PdeBenchmark::ALL {
            let res = if b.dim() == 3 { 8 } else { 15 };
            let pts = collocation_grid(b.dim(), res, 1e-3).unwrap();
            let loss = pde_residual_loss_with(|p| Ok(b.solution(p)), b, &pts, 1e-3).unwrap();
            assert!(loss <= 1e-6, "{b}: {loss}");
        }
    }

    #[test]
    fn zero_model_poisson_loss() {
        let b = PdeBenchmark::Poisson2d;
        let pts = collocation_grid(2, 6, 1e-3).unwrap();
        let expected = pts.iter().map(|x| b.forcing(x).powi(2)).sum::<f64>() / (2.0 * pts.len() as f64);
        let mut model =
            HybridParams::init(ModelVariant::Hybrid, &ModelShape::new(2, 4), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let zeros = vec![0.0; model.num_params()];
        model.set_flat(&zeros).unwrap();
        let got = pde_residual_loss(&model, &Backend::exact(), b, &pts, 1e-3).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
        let obj = Objective::Pde(PdeProblem::new(b, pts, 1e-3).unwrap());
        let raw = vec![0.0; obj.eval_points().len()];
        assert!((obj.loss(&raw).unwrap() - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn helmholtz_origin_zero() {
        let b = PdeBenchmark::Helmholtz3d;
        let loss = pde_residual_loss_with(|_| Ok(0.0), b, &[vec![0.0; 3]], 1e-3).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn grid_counts_and_determinism() {
        let g = make_grids(PdeBenchmark::Poisson2d, 30, 100).unwrap();
        assert_eq!(g.collocation.len(), 900);
        assert_eq!(g.evaluation.len(), 10_000);
        assert_eq!(make_grids(PdeBenchmark::Helmholtz3d, 12, 30).unwrap().collocation.len(), 1728);
        assert_eq!(evaluation_grid(3, 30).unwrap().len(), 27_000);
        assert_eq!(g, make_grids(PdeBenchmark::Poisson2d, 30, 100).unwrap());
        assert!(g.collocation.iter().all(|p| p.iter().all(|v| v.abs() < 1.0 - 2e-3)));
        assert!(matches!(collocation_grid(2, 2, 1e-3), Err(Error::Resolution(2))));
        assert!(matches!(collocation_grid(2, 600, 1e-3), Err(Error::Resolution(600))));
    }

    #[test]
    fn upstream_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for b in PdeBenchmark::ALL {
            let pts = collocation_grid(b.dim(), 3, 1e-2).unwrap();
            let obj = Objective::Pde(PdeProblem::new(b, pts, 1e-2).unwrap());
            let raw: Vec<f64> = (0..obj.eval_points().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, up) = obj.loss_and_upstream(&raw).unwrap();
            for i in (0..raw.len()).step_by(3) {
                let eps = 1e-6;
                let mut p = raw.clone();
                p[i] += eps;
                let lp = obj.loss(&p).unwrap();
                p[i] -= 2.0 * eps;
                let lm = obj.loss(&p).unwrap();
                let fd = (lp - lm) / (2.0 * eps);
                assert!((fd - up[i]).abs() <= 1e-5 * fd.abs().max(1.0), "{b} {i}: {fd} vs {}", up[i]);
            }
        }
    }

    #[test]
    fn kfold_sizes_and_cover() {
        let folds = kfold(308, 5, 3).unwrap();
        let sizes: Vec<_> = folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![62, 62, 62, 61, 61]);
        let mut all: Vec<_> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..308).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.train.len() + f.test.len(), 308);
            assert!(f.test.iter().all(|i| !f.train.contains(i)));
        }
        assert_eq!(folds, kfold(308, 5, 3).unwrap());
        assert_ne!(folds, kfold(308, 5, 4).unwrap());
        assert!(kfold(10, 1, 0).is_err());
    }

    #[test]
    fn yacht_surrogate_shape() {
        let y = TabularData::yacht_surrogate(0);
        assert_eq!((y.len(), y.dim()), (308, 6));
        assert!(y.targets.iter().all(|t| *t > 0.0));
        let max = y.targets.iter().copied().fold(0.0, f64::max);
        assert!(max > 20.0 && max < 120.0, "{max}");
    }

    #[test]
    fn split_uses_training_statistics_only() {
        let data = TabularData::yacht_surrogate(1);
        let fold = &kfold(data.len(), 5, 0).unwrap()[2];
        let split = data.split(fold).unwrap();
        let rows: Vec<&[f64]> = fold.train.iter().map(|&i| data.features[i].as_slice()).collect();
        assert_eq!(split.features, Standardizer::fit(&rows).unwrap());
        let mut perturbed = data.clone();
        for &i in &fold.test {
            perturbed.features[i][0] += 1000.0;
            perturbed.targets[i] *= 50.0;
        }
        let again = perturbed.split(fold).unwrap();
        assert_eq!(again.features, split.features);
        assert_eq!(again.target, split.target);
        assert_eq!(again.train_x, split.train_x);
        assert!(split.train_y.iter().all(|t| (0.0..=1.0).contains(t)));
    }

    #[test]
    fn normalization_round_trip() {
        let data = TabularData::yacht_surrogate(2);
        let rows: Vec<&[f64]> = data.features.iter().map(Vec::as_slice).collect();
        let s = Standardizer::fit(&rows).unwrap();
        let t = TargetScaler::fit(&data.targets).unwrap();
        for (x, y) in data.features.iter().zip(&data.targets) {
            let back = s.invert(&s.apply(x));
            assert!(back.iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0)));
            assert!((t.invert(t.apply(*y)) - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn constant_feature_is_centred() {
        let rows: Vec<&[f64]> = vec![&[1.0, 4.0], &[3.0, 4.0]];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.std[1], 1.0);
        assert_eq!(s.apply(&[3.0, 4.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let ok = TabularData::parse("t", "1, 2, 3\n\n4 5 6\n", &TabularSchema::default()).unwrap();
        assert_eq!(ok.features, vec![vec![1.0, 2.0], vec![4.0, 5.0]]);
        assert_eq!(ok.targets, vec![3.0, 6.0]);
        let err = TabularData::parse("t", "1,2,3\n4,x,6\n", &TabularSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = TabularData::parse("t", "1,2,3\n\n4,5\n", &TabularSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let schema = TabularSchema { target_column: Some(0), header_lines: 1 };
        let t = TabularData::parse("t", "a,b,c\n9,1,2\n", &schema).unwrap();
        assert_eq!((t.targets[0], t.features[0].clone()), (9.0, vec![1.0, 2.0]));
    }
}
