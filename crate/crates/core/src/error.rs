use thiserror::Error;

/// Errors raised by the simulator, models, optimizers and task catalog.
#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit count {0} outside supported range 1..={max}", max = crate::qsim::MAX_QUBITS)]
    QubitCount(usize),

    #[error("qubit index {index} out of range for {n_qubits} qubits")]
    QubitIndex { index: usize, n_qubits: usize },

    #[error("CNOT control and target must differ (both {0})")]
    SameControlTarget(usize),

    #[error("shot count must be at least 1")]
    ZeroShots,

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("circuit depth {depth} would exceed maximum {max}")]
    DepthLimit { depth: usize, max: usize },

    #[error("embedding has {count} parameters, above the budget of {budget}")]
    ParameterBudget { count: usize, budget: usize },

    #[error("model variant {variant} is inconsistent with its parameters: {reason}")]
    Variant {
        variant: &'static str,
        reason: &'static str,
    },

    #[error("point {0:?} lies outside the domain [-1, 1]^d")]
    OutsideDomain(Vec<f64>),

    #[error("point {point:?} is closer than {margin} to the boundary; stencil would leave the domain")]
    Stencil { point: Vec<f64>, margin: f64 },

    #[error("grid resolution {0} is too small")]
    Resolution(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("quantum Fisher information requires exact statevector mode")]
    QfimNeedsExact,

    #[error("linear solve failed; regularizer {0} too small for an ill-conditioned metric")]
    Solve(f64),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
