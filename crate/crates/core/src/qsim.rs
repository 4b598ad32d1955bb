//! Exact statevector simulation for small circuits.
//!
//! Basis-state labels are integers whose least-significant bit is qubit 0, so
//! `|10⟩` written as (q1 q0) is index 2 and has qubit 1 set. Gates update the
//! amplitude vector in place, pairwise, without building 2^n×2^n matrices.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 10;

/// Pure state of `n_qubits` qubits as 2^n complex amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

/// Elementary gates. Rotations follow `R_P(θ) = exp(-iθP/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Gate {
    Rx { target: usize, angle: f64 },
    Ry { target: usize, angle: f64 },
    Rz { target: usize, angle: f64 },
    Cnot { control: usize, target: usize },
}

impl Gate {
    pub fn target(&self) -> usize {
        match *self {
            Gate::Rx { target, .. }
            | Gate::Ry { target, .. }
            | Gate::Rz { target, .. }
            | Gate::Cnot { target, .. } => target,
        }
    }

    pub fn angle(&self) -> Option<f64> {
        match *self {
            Gate::Rx { angle, .. } | Gate::Ry { angle, .. } | Gate::Rz { angle, .. } => Some(angle),
            Gate::Cnot { .. } => None,
        }
    }

    /// The gate undoing this one: rotations negate their angle, CNOT is self-inverse.
    pub fn inverse(&self) -> Gate {
        match *self {
            Gate::Rx { target, angle } => Gate::Rx { target, angle: -angle },
            Gate::Ry { target, angle } => Gate::Ry { target, angle: -angle },
            Gate::Rz { target, angle } => Gate::Rz { target, angle: -angle },
            cnot @ Gate::Cnot { .. } => cnot,
        }
    }

    /// 2×2 matrix of a single-qubit rotation; `None` for CNOT.
    pub fn matrix(&self) -> Option<[[Complex64; 2]; 2]> {
        let half = self.angle()? / 2.0;
        let (s, c) = half.sin_cos();
        let z = Complex64::new(0.0, 0.0);
        let m = match self {
            Gate::Rx { .. } => [
                [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
                [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
            ],
            Gate::Ry { .. } => [
                [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
                [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
            ],
            Gate::Rz { .. } => [[Complex64::new(c, -s), z], [z, Complex64::new(c, s)]],
            Gate::Cnot { .. } => unreachable!(),
        };
        Some(m)
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        let check = |index: usize| {
            if index < n_qubits {
                Ok(())
            } else {
                Err(Error::QubitIndex { index, n_qubits })
            }
        };
        match *self {
            Gate::Cnot { control, target } => {
                check(control)?;
                check(target)?;
                if control == target {
                    return Err(Error::SameControlTarget(control));
                }
                Ok(())
            }
            other => check(other.target()),
        }
    }
}

impl QuantumState {
    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&n_qubits) {
            return Err(Error::QubitCount(n_qubits));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { n_qubits, amps })
    }

    /// Wraps raw amplitudes; the length must be a power of two in range. No
    /// normalization is applied.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::Invalid(format!("amplitude vector length {len} is not 2^n with n ≥ 1")));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(Error::QubitCount(n_qubits));
        }
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &QuantumState) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        match *gate {
            Gate::Cnot { control, target } => {
                let cbit = 1usize << control;
                let tbit = 1usize << target;
                for i in 0..self.amps.len() {
                    // visit each swapped pair once, from its target-0 member
                    if i & cbit != 0 && i & tbit == 0 {
                        self.amps.swap(i, i | tbit);
                    }
                }
            }
            Gate::Ry { target, angle } => {
                let (s, c) = (angle / 2.0).sin_cos();
                self.for_each_pair(target, |a0, a1| {
                    let (x, y) = (*a0, *a1);
                    *a0 = x * c - y * s;
                    *a1 = x * s + y * c;
                });
            }
            _ => {
                let m = gate.matrix().expect("rotation gate");
                self.for_each_pair(gate.target(), |a0, a1| {
                    let (x, y) = (*a0, *a1);
                    *a0 = m[0][0] * x + m[0][1] * y;
                    *a1 = m[1][0] * x + m[1][1] * y;
                });
            }
        }
        Ok(())
    }

    pub fn apply_all(&mut self, gates: &[Gate]) -> Result<()> {
        gates.iter().try_for_each(|g| self.apply(g))
    }

    fn for_each_pair(&mut self, target: usize, mut f: impl FnMut(&mut Complex64, &mut Complex64)) {
        let stride = 1usize << target;
        for block in self.amps.chunks_exact_mut(stride << 1) {
            let (lo, hi) = block.split_at_mut(stride);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                f(a0, a1);
            }
        }
    }

    /// Exact ⟨Z_qubit⟩ = Σ_b (±1)|amp_b|², + when the qubit's bit is 0.
    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        if qubit >= self.n_qubits {
            return Err(Error::QubitIndex { index: qubit, n_qubits: self.n_qubits });
        }
        let bit = 1usize << qubit;
        Ok(self
            .amps
            .iter()
            .enumerate()
            .map(|(i, a)| if i & bit == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum())
    }

    /// Mean of `shots` independent ±1 outcomes of measuring Z on `qubit`.
    pub fn sample_expectation_z<R: Rng + ?Sized>(&self, qubit: usize, shots: u32, rng: &mut R) -> Result<f64> {
        if shots == 0 {
            return Err(Error::ZeroShots);
        }
        let exact = self.expectation_z(qubit)?;
        let p_plus = ((1.0 + exact) / 2.0).clamp(0.0, 1.0);
        let plus = (0..shots).filter(|_| rng.gen::<f64>() < p_plus).count() as f64;
        Ok((2.0 * plus - shots as f64) / shots as f64)
    }
}

pub fn zero_state(n_qubits: usize) -> Result<QuantumState> {
    QuantumState::zero(n_qubits)
}

pub fn apply_gate(mut state: QuantumState, gate: &Gate) -> Result<QuantumState> {
    state.apply(gate)?;
    Ok(state)
}

pub fn expectation_z(state: &QuantumState, qubit: usize) -> Result<f64> {
    state.expectation_z(qubit)
}

pub fn sample_expectation_z<R: Rng + ?Sized>(
    state: &QuantumState,
    qubit: usize,
    shots: u32,
    rng: &mut R,
) -> Result<f64> {
    state.sample_expectation_z(qubit, shots, rng)
}

/// How expectation values are read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Measurement {
    #[default]
    Exact,
    Shots(u32),
}

/// Circuit executor with exact execution and shot accounting.
///
/// Every circuit run goes through here so counters are exact. In shot mode the
/// sampler is a single seeded stream behind a mutex; callers keep shot-mode
/// evaluation sequential to stay reproducible.
#[derive(Debug)]
pub struct Backend {
    measurement: Measurement,
    rng: Mutex<ChaCha8Rng>,
    executions: AtomicU64,
    shots: AtomicU64,
}

impl Backend {
    pub fn exact() -> Self {
        Self::new(Measurement::Exact, 0)
    }

    pub fn new(measurement: Measurement, seed: u64) -> Self {
        Self {
            measurement,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            executions: AtomicU64::new(0),
            shots: AtomicU64::new(0),
        }
    }

    pub fn measurement(&self) -> Measurement {
        self.measurement
    }

    pub fn is_exact(&self) -> bool {
        self.measurement == Measurement::Exact
    }

    /// Prepares `gates` applied to `|0…0⟩`; counts one execution.
    pub fn prepare(&self, n_qubits: usize, gates: &[Gate]) -> Result<QuantumState> {
        let mut state = QuantumState::zero(n_qubits)?;
        state.apply_all(gates)?;
        self.executions.fetch_add(1, Ordering::Relaxed);
        Ok(state)
    }

    /// Runs the circuit and reads ⟨Z_qubit⟩ according to the measurement mode.
    pub fn measure_z(&self, n_qubits: usize, gates: &[Gate], qubit: usize) -> Result<f64> {
        let state = self.prepare(n_qubits, gates)?;
        match self.measurement {
            Measurement::Exact => state.expectation_z(qubit),
            Measurement::Shots(shots) => {
                self.shots.fetch_add(u64::from(shots), Ordering::Relaxed);
                let mut rng = self.rng.lock().expect("shot sampler poisoned");
                state.sample_expectation_z(qubit, shots, &mut *rng)
            }
        }
    }

    /// Circuit executions so far.
    pub fn executions(&self) -> u64 {
        self.executions.load(Ordering::Relaxed)
    }

    /// Measurement shots consumed so far (0 in exact mode).
    pub fn shots_used(&self) -> u64 {
        self.shots.load(Ordering::Relaxed)
    }
}
