//! Variational steady states and dynamics of Lindblad master equations.
//!
//! The crate trains a layered quantum-network ansatz for the density matrix
//! of a dissipative spin system by stochastic reconfiguration: the network's
//! parameter-shift derivatives are contracted into a metric `S` and force
//! vector `f`, and parameters follow `Θ ← Θ + λ S⁻¹ f` until the Lindbladian
//! residual vanishes (steady states) or for a fixed time grid (dynamics).
//!
//! Modules:
//! - [`linalg`], [`pauli`], [`density`]: dense complex kernels, Pauli
//!   strings, spin configurations, density matrices.
//! - [`network`]: the layered ansatz, feedforward, and parameter-shift
//!   derivatives.
//! - [`lindblad`]: dissipative spin models and local matrix elements.
//! - [`solver`]: S/f assembly from dense states, the regularized update,
//!   and the outer training loop.
//! - [`mcmc`]: Metropolis sampling estimators for S, f, and observables.
//! - [`shots`]: swap-test and controlled-operator circuit estimators with
//!   optional binomial shot noise.
//! - [`oracle`]: exact-diagonalization reference (dense superoperator,
//!   steady state, RK4 integration).

pub mod density;
pub mod error;
pub mod linalg;
pub mod lindblad;
pub mod mcmc;
pub mod network;
pub mod oracle;
pub mod pauli;
pub mod shots;
pub mod solver;
pub mod testing;

pub use density::DensityMatrix;
pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C64};
pub use lindblad::{LindbladModel, LocalOp};
pub use mcmc::{estimate_observable, estimate_sr, MoveSet, SrEstimate};
pub use network::{
    evaluate_with_derivatives, feedforward, parameter_shift_derivative, Connectivity,
    NetworkEvaluation, NetworkTopology, ParamVector, Tying,
};
pub use pauli::{Observable, PauliOp, PauliString, SpinConfig};
pub use shots::{
    assemble_shots, ctrl_o1_o2_test, ctrl_o_test, overlap_test, Part, ShotConfig, ShotCount,
};
pub use solver::{
    assemble_exact, delta_l, run, solve_update, Backend, Mode, RunResult, SolverConfig, SrSystem,
    TrajectoryRecord,
};
