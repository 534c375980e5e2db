//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands disagree on dimension.
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),

    /// A matrix or vector is not sized as 2^n for any n.
    #[error("dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),

    /// A qubit index points outside the register.
    #[error("qubit index {index} out of range for {n_qubits} qubits")]
    QubitOutOfRange { index: usize, n_qubits: usize },

    /// Repeated qubit index where distinct qubits are required.
    #[error("duplicate qubit index {0} in gate wiring")]
    DuplicateQubit(usize),

    /// A network topology violates a structural rule.
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    /// Parameter vector length does not match the topology.
    #[error("parameter count mismatch: topology expects {expected}, got {got}")]
    ParamCount { expected: usize, got: usize },

    /// Parameter index outside the parameter vector.
    #[error("parameter index {0} out of range ({1} parameters)")]
    ParamIndex(usize, usize),

    /// Model constraint violated (site counts, lattice shape, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Dense-oracle size guard tripped.
    #[error("size guard: {n_sites} sites exceeds the dense-oracle limit of {limit}")]
    SizeGuard { n_sites: usize, limit: usize },

    /// A spin configuration has the wrong number of sites.
    #[error("spin configuration has {got} sites, expected {expected}")]
    ConfigLength { expected: usize, got: usize },

    /// Sampling started (or got trapped) on a zero-amplitude configuration.
    #[error("zero amplitude encountered while sampling; density matrix is degenerate on the sampled support")]
    ZeroAmplitude,

    /// Markov chain made no accepted move for too long.
    #[error("markov chain stuck: no accepted move in {0} consecutive proposals")]
    ChainStuck(usize),

    /// Non-finite number produced where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Observable cannot be decomposed into the supported local terms.
    #[error("observable not supported by the sampling estimator: {0}")]
    UnsupportedObservable(String),

    /// Controlled-operator tests require unit-coefficient Hermitian Pauli strings.
    #[error("control operator must be a Hermitian Pauli string with coefficient ±1")]
    NonUnitaryControl,

    /// A finite-shot frequency landed where a required inversion is undefined.
    #[error("degenerate shot estimate: {0}")]
    DegenerateShots(String),

    /// Text could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// The requested backend cannot run with the given options.
    #[error("backend configuration error: {0}")]
    BackendConfig(String),

    /// Underlying linear-algebra routine failed.
    #[error("linear algebra failure: {0}")]
    Linalg(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
