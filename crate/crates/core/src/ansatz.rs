//! Data re-uploading circuit: `L` layers, each a rotation block
//! `R(φ_j z_j + β_j)` on every qubit followed by a fixed CNOT entangler.
//! Layer 1 acts first on `|0…0⟩`; the feature is ⟨Z⟩ on qubit 0.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{Backend, Gate, MAX_QUBITS};

/// Qubit measured for the scalar quantum feature.
pub const READOUT_QUBIT: usize = 0;

/// Largest depth a training config may request.
pub const MAX_DEPTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Linear,
    Circular,
}

impl Topology {
    /// Linear up to four qubits, circular beyond.
    pub fn default_for(n_qubits: usize) -> Self {
        if n_qubits <= 4 {
            Topology::Linear
        } else {
            Topology::Circular
        }
    }

    /// (control, target) pairs of one entangling block.
    pub fn entanglers(self, n_qubits: usize) -> Vec<(usize, usize)> {
        let mut pairs: Vec<_> = (0..n_qubits.saturating_sub(1)).map(|j| (j, j + 1)).collect();
        if self == Topology::Circular && n_qubits > 1 {
            pairs.push((n_qubits - 1, 0));
        }
        pairs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RotationAxis {
    X,
    #[default]
    Y,
    Z,
}

impl RotationAxis {
    fn gate(self, target: usize, angle: f64) -> Gate {
        match self {
            RotationAxis::X => Gate::Rx { target, angle },
            RotationAxis::Y => Gate::Ry { target, angle },
            RotationAxis::Z => Gate::Rz { target, angle },
        }
    }
}

/// Latent coordinates fed to the rotation angles, one per qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Trainable circuit parameters. `phi[l][j]` scales the input of qubit `j` in
/// layer `l`, `beta[l][j]` offsets it.
///
/// Flat order is layer-major: for each layer all `phi` of that layer, then all
/// `beta` of that layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzParams {
    pub n_qubits: usize,
    pub depth: usize,
    pub topology: Topology,
    pub phi: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    #[serde(default)]
    pub rotation: RotationAxis,
}

impl AnsatzParams {
    /// All-zero parameters.
    pub fn zeros(n_qubits: usize, depth: usize, topology: Topology) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&n_qubits) {
            return Err(Error::QubitCount(n_qubits));
        }
        if depth == 0 {
            return Err(Error::Invalid("circuit depth must be at least 1".into()));
        }
        Ok(Self {
            n_qubits,
            depth,
            topology,
            phi: vec![vec![0.0; n_qubits]; depth],
            beta: vec![vec![0.0; n_qubits]; depth],
            rotation: RotationAxis::Y,
        })
    }

    /// One layer with scales in [0.5, 1.5] and phases in [-0.1, 0.1].
    pub fn init_random<R: Rng + ?Sized>(n_qubits: usize, topology: Topology, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(n_qubits, 1, topology)?;
        for j in 0..n_qubits {
            p.phi[0][j] = rng.gen_range(0.5..=1.5);
            p.beta[0][j] = rng.gen_range(-0.1..=0.1);
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_QUBITS).contains(&self.n_qubits) {
            return Err(Error::QubitCount(self.n_qubits));
        }
        if self.depth == 0 {
            return Err(Error::Invalid("circuit depth must be at least 1".into()));
        }
        for (what, m) in [("phi layers", &self.phi), ("beta layers", &self.beta)] {
            if m.len() != self.depth {
                return Err(Error::Dimension { what, expected: self.depth, got: m.len() });
            }
            if let Some(row) = m.iter().find(|r| r.len() != self.n_qubits) {
                return Err(Error::Dimension { what: "ansatz row", expected: self.n_qubits, got: row.len() });
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        2 * self.depth * self.n_qubits
    }

    pub fn phi_index(&self, layer: usize, qubit: usize) -> usize {
        2 * layer * self.n_qubits + qubit
    }

    pub fn beta_index(&self, layer: usize, qubit: usize) -> usize {
        2 * layer * self.n_qubits + self.n_qubits + qubit
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in 0..self.depth {
            out.extend_from_slice(&self.phi[l]);
            out.extend_from_slice(&self.beta[l]);
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension { what: "ansatz flat vector", expected: self.num_params(), got: flat.len() });
        }
        let n = self.n_qubits;
        for (l, chunk) in flat.chunks_exact(2 * n).enumerate() {
            self.phi[l].copy_from_slice(&chunk[..n]);
            self.beta[l].copy_from_slice(&chunk[n..]);
        }
        Ok(())
    }

    pub fn entangler_count(&self) -> usize {
        self.topology.entanglers(self.n_qubits).len()
    }

    /// Gates per execution, `L·(n_qubits + E)`.
    pub fn gate_count(&self) -> usize {
        self.depth * (self.n_qubits + self.entangler_count())
    }

    /// Rotation angles `φ[l][j]·input(l, j) + β[l][j]`, layer-major.
    pub fn angles_with(&self, input: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.depth * self.n_qubits);
        for l in 0..self.depth {
            for j in 0..self.n_qubits {
                out.push(self.phi[l][j] * input(l, j) + self.beta[l][j]);
            }
        }
        out
    }

    /// Angles when every layer re-uploads the same latent vector.
    pub fn angles(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.n_qubits {
            return Err(Error::Dimension { what: "latent vector", expected: self.n_qubits, got: z.len() });
        }
        Ok(self.angles_with(|_, j| z[j]))
    }

    /// Gate list for a layer-major angle vector.
    pub fn gates_from_angles(&self, angles: &[f64]) -> Vec<Gate> {
        let ent = self.topology.entanglers(self.n_qubits);
        let mut gates = Vec::with_capacity(self.gate_count());
        for layer in angles.chunks_exact(self.n_qubits) {
            gates.extend(layer.iter().enumerate().map(|(j, &a)| self.rotation.gate(j, a)));
            gates.extend(ent.iter().map(|&(control, target)| Gate::Cnot { control, target }));
        }
        gates
    }

    /// ⟨Z_0⟩ for the circuit with the given angles.
    pub fn feature_from_angles(&self, angles: &[f64], backend: &Backend) -> Result<f64> {
        backend.measure_z(self.n_qubits, &self.gates_from_angles(angles), READOUT_QUBIT)
    }

    /// Appends a layer whose entries are uniform in `[-init_scale, init_scale]`.
    pub fn grow_layer<R: Rng + ?Sized>(&self, init_scale: f64, max_depth: usize, rng: &mut R) -> Result<Self> {
        if self.depth + 1 > max_depth {
            return Err(Error::DepthLimit { depth: self.depth + 1, max: max_depth });
        }
        let mut draw = || if init_scale > 0.0 { rng.gen_range(-init_scale..=init_scale) } else { 0.0 };
        let mut grown = self.clone();
        grown.phi.push((0..self.n_qubits).map(|_| draw()).collect());
        grown.beta.push((0..self.n_qubits).map(|_| draw()).collect());
        grown.depth += 1;
        Ok(grown)
    }
}

pub fn build_circuit(z: &LatentVector, params: &AnsatzParams) -> Result<Vec<Gate>> {
    params.validate()?;
    Ok(params.gates_from_angles(&params.angles(z.as_slice())?))
}

/// `y_q = ⟨ψ(z)|Z_0|ψ(z)⟩`, exact or sampled depending on the backend.
pub fn quantum_feature(z: &LatentVector, params: &AnsatzParams, backend: &Backend) -> Result<f64> {
    let gates = build_circuit(z, params)?;
    backend.measure_z(params.n_qubits, &gates, READOUT_QUBIT)
}

pub fn grow_layer<R: Rng + ?Sized>(
    params: &AnsatzParams,
    init_scale: f64,
    max_depth: usize,
    rng: &mut R,
) -> Result<AnsatzParams> {
    params.grow_layer(init_scale, max_depth, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::QuantumState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn params(n: usize, phi: Vec<Vec<f64>>, beta: Vec<Vec<f64>>, topology: Topology) -> AnsatzParams {
        AnsatzParams { n_qubits: n, depth: phi.len(), topology, phi, beta, rotation: RotationAxis::Y }
    }

    #[test]
    fn two_qubit_gate_list() {
        let p = params(2, vec![vec![1.0, 1.0]], vec![vec![0.0, 0.0]], Topology::Linear);
        let gates = build_circuit(&LatentVector(vec![PI, 0.0]), &p).unwrap();
        assert_eq!(
            gates,
            vec![
                Gate::Ry { target: 0, angle: PI },
                Gate::Ry { target: 1, angle: 0.0 },
                Gate::Cnot { control: 0, target: 1 },
            ]
        );
    }

    #[test]
    fn zero_angles_leave_zero_state() {
        let p = AnsatzParams::zeros(3, 2, Topology::Circular).unwrap();
        let gates = build_circuit(&LatentVector(vec![0.0; 3]), &p).unwrap();
        assert!(gates.iter().filter_map(Gate::angle).all(|a| a == 0.0));
        let mut s = QuantumState::zero(3).unwrap();
        s.apply_all(&gates).unwrap();
        assert_eq!(s, QuantumState::zero(3).unwrap());
    }

    #[test]
    fn gate_count_formula() {
        let p = AnsatzParams::zeros(4, 2, Topology::Circular).unwrap();
        assert_eq!(p.gate_count(), 16);
        assert_eq!(build_circuit(&LatentVector(vec![0.1; 4]), &p).unwrap().len(), 16);
        assert_eq!(AnsatzParams::zeros(4, 2, Topology::Linear).unwrap().gate_count(), 14);
        assert_eq!(AnsatzParams::zeros(1, 3, Topology::Circular).unwrap().gate_count(), 3);
    }

    #[test]
    fn dimension_mismatch() {
        let p = AnsatzParams::zeros(3, 1, Topology::Linear).unwrap();
        assert!(matches!(build_circuit(&LatentVector(vec![0.0; 2]), &p), Err(Error::Dimension { .. })));
        let mut bad = p.clone();
        bad.phi.push(vec![0.0; 3]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn feature_closed_forms() {
        let b = Backend::exact();
        let one = params(1, vec![vec![1.0]], vec![vec![0.0]], Topology::Linear);
        for theta in [-2.0, 0.2, 1.4, 3.0] {
            let y = quantum_feature(&LatentVector(vec![theta]), &one, &b).unwrap();
            assert!((y - theta.cos()).abs() < 1e-12);
        }
        let zero = AnsatzParams::zeros(4, 3, Topology::Circular).unwrap();
        assert_eq!(quantum_feature(&LatentVector(vec![0.3, -1.0, 2.0, 5.0]), &zero, &b).unwrap(), 1.0);

        // second qubit is driven but only acts as CNOT target
        let two = params(2, vec![vec![1.0, 0.0]], vec![vec![0.0, 0.0]], Topology::Linear);
        for (theta, other) in [(0.4, 9.0), (2.2, -3.0)] {
            let y = quantum_feature(&LatentVector(vec![theta, other]), &two, &b).unwrap();
            assert!((y - theta.cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn growth_bookkeeping() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = AnsatzParams::init_random(4, Topology::Linear, &mut rng).unwrap();
        p = p.grow_layer(0.1, 4, &mut rng).unwrap();
        assert_eq!(p.depth, 2);
        let before = p.num_params();
        let grown = p.grow_layer(0.0, 4, &mut rng).unwrap();
        assert_eq!(grown.depth, 3);
        assert_eq!(grown.num_params() - before, 8);
        assert!(grown.phi[2].iter().chain(&grown.beta[2]).all(|&v| v == 0.0));
        assert!(matches!(grown.grow_layer(0.0, 3, &mut rng), Err(Error::DepthLimit { depth: 4, max: 3 })));

        let scaled = p.grow_layer(0.05, 4, &mut rng).unwrap();
        assert!(scaled.phi[2].iter().chain(&scaled.beta[2]).all(|v| v.abs() <= 0.05));
    }

    #[test]
    fn zero_growth_single_qubit_preserves_output() {
        let b = Backend::exact();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = AnsatzParams::init_random(1, Topology::Circular, &mut rng).unwrap();
        let grown = p.grow_layer(0.0, 5, &mut rng).unwrap();
        for z in [-1.3, 0.0, 0.7, 2.9] {
            let z = LatentVector(vec![z]);
            assert_eq!(quantum_feature(&z, &p, &b).unwrap(), quantum_feature(&z, &grown, &b).unwrap());
        }
    }

    #[test]
    fn zero_growth_basis_state_outputs() {
        // angles of 0 or π keep the pre-growth state a computational basis state;
        // the new entanglers only permute basis states
        let b = Backend::exact();
        for topology in [Topology::Linear, Topology::Circular] {
            let p = params(3, vec![vec![1.0, 1.0, 1.0]], vec![vec![0.0, 0.0, 0.0]], topology);
            let grown = p.grow_layer(0.0, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            for bits in 0..8u32 {
                let z: Vec<f64> = (0..3).map(|j| if bits >> j & 1 == 1 { PI } else { 0.0 }).collect();
                let z = LatentVector(z);
                let before = quantum_feature(&z, &p, &b).unwrap();
                let after = quantum_feature(&z, &grown, &b).unwrap();
                assert!(before.abs() > 1.0 - 1e-12 && after.abs() > 1.0 - 1e-12);
                if topology == Topology::Linear {
                    assert!((before - after).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_growth_linear_keeps_readout_qubit() {
        // qubit 0 is only ever a CNOT control in a linear block, so Z_0 commutes with it
        let b = Backend::exact();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = AnsatzParams::init_random(4, Topology::Linear, &mut rng).unwrap();
        let grown = p.grow_layer(0.0, 3, &mut rng).unwrap();
        for _ in 0..10 {
            let z = LatentVector((0..4).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let d = quantum_feature(&z, &p, &b).unwrap() - quantum_feature(&z, &grown, &b).unwrap();
            assert!(d.abs() <= 1e-12);
        }
    }

    #[test]
    fn growth_then_truncation_reproduces_circuit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AnsatzParams::init_random(3, Topology::Circular, &mut rng).unwrap();
        let grown = p.grow_layer(0.0, 2, &mut rng).unwrap();
        let z = LatentVector(vec![0.2, -0.4, 1.1]);
        let a = build_circuit(&z, &p).unwrap();
        let b = build_circuit(&z, &grown).unwrap();
        assert_eq!(&b[..a.len()], &a[..]);
    }

    #[test]
    fn checkpoint_json_shape() {
        let p = params(2, vec![vec![1.0, 0.5]], vec![vec![0.1, -0.2]], Topology::Linear);
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        for key in ["n_qubits", "depth", "topology", "phi", "beta"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: AnsatzParams = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn flat_round_trip(n in 1usize..=6, depth in 1usize..=4, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut p = AnsatzParams::zeros(n, depth, Topology::Linear).unwrap();
                let flat: Vec<f64> = (0..p.num_params()).map(|_| rng.gen_range(-3.0..3.0)).collect();
                p.unflatten(&flat).unwrap();
                prop_assert_eq!(p.flatten(), flat.clone());
                prop_assert_eq!(p.phi[depth - 1][n - 1], flat[p.phi_index(depth - 1, n - 1)]);
                prop_assert_eq!(p.beta[0][0], flat[p.beta_index(0, 0)]);
            }

            #[test]
            fn angle_linearity(z in prop::collection::vec(-3.0f64..3.0, 3), dz in 1e-3f64..1.0, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = AnsatzParams::init_random(3, Topology::Linear, &mut rng).unwrap()
                    .grow_layer(0.5, 3, &mut rng).unwrap();
                let base = p.angles(&z).unwrap();
                for j in 0..3 {
                    let mut zj = z.clone();
                    zj[j] += dz;
                    let moved = p.angles(&zj).unwrap();
                    for l in 0..p.depth {
                        let slope = (moved[l * 3 + j] - base[l * 3 + j]) / dz;
                        prop_assert!((slope - p.phi[l][j]).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
