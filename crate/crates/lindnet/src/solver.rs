//! Stochastic-reconfiguration training loop.
//!
//! Each iteration contracts the network's state `ρ` and its parameter
//! derivatives into a metric
//!
//! ```text
//! S_{μν} = Re⟨∂_μρ, ∂_νρ⟩ − Re[⟨∂_μρ, ρ⟩⟨ρ, ∂_νρ⟩],
//! f_μ    = Re⟨∂_μρ, Lρ⟩ − Re[⟨∂_μρ, ρ⟩⟨ρ, Lρ⟩],
//! ```
//!
//! with `⟨·,·⟩` the Hilbert–Schmidt inner product on states vectorized and
//! scaled to unit HS norm, then moves parameters by
//! `Θ ← Θ + λ (S + εI)⁻¹ f`. In steady-state mode the learning rate decays
//! geometrically and the loop stops once `|δL| = |⟨ρ,Lρ⟩|/⟨ρ,ρ⟩` falls
//! below tolerance; in dynamics mode `λ = dt` is the physical time step
//! and the iteration count sets the time grid.
//!
//! Scaling every vectorized quantity by `1/‖ρ‖_HS` gives entrywise the
//! same `S` and `f` as the full projective (quotient-rule) derivative of
//! `ρ/‖ρ‖`: the projection terms absorb the norm derivative. The scaled
//! form is used because the sampling backends estimate exactly it.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, SolveH, UPLO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::linalg::{fro_norm, hs_inner, CMat};
use crate::lindblad::LindbladModel;
use crate::network::{evaluate_with_derivatives, NetworkTopology, ParamVector};
use crate::pauli::Observable;

/// Metric and force of one stochastic-reconfiguration step.
#[derive(Debug, Clone)]
pub struct SrSystem {
    /// Real symmetric `P×P` metric.
    pub s: Array2<f64>,
    /// Real force vector of length `P`.
    pub f: Array1<f64>,
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Decaying learning rate, stop on `|δL| < convergence_tol`.
    SteadyState,
    /// Fixed step `λ = dt`; the iteration index is the time grid.
    Dynamics,
}

/// Where Gaussian noise is injected when `noise_eps > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseTarget {
    /// Perturb the real and imaginary part of every entry of every
    /// derivative matrix before contraction (the default reading of
    /// noisy "quantum derivatives").
    #[default]
    Derivatives,
    /// Perturb the assembled `S` and `f` entries instead.
    SystemEntries,
}

/// How `S` and `f` are estimated each iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    /// Dense feedforward and exact contractions.
    Exact,
    /// Metropolis pair-chain sampling of the element-ratio estimators.
    Mcmc {
        n_samples: usize,
        /// Discarded leading steps; `None` uses the chain default.
        burn_in: Option<usize>,
    },
    /// Interference-circuit measurement of every `S`/`f` entry. Derivative
    /// noise injection does not reach this backend (the circuits measure
    /// the true shifted states); use `SystemEntries` noise instead.
    Shots {
        /// Shot budget per circuit evaluation.
        shots: crate::shots::ShotCount,
    },
}

/// Full configuration of a training run.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub mode: Mode,
    /// Initial learning rate (steady-state mode).
    pub lr0: f64,
    /// Geometric decay per step of the learning rate (steady-state mode).
    pub lr_decay: f64,
    /// Physical time step (dynamics mode).
    pub dt: f64,
    pub max_steps: usize,
    /// Ridge added to `S` before solving.
    pub tikhonov_eps: f64,
    /// Standard deviation of injected Gaussian noise (0 disables).
    pub noise_eps: f64,
    pub noise_target: NoiseTarget,
    /// Seeds the parameter initialization, noise, and sampling streams.
    pub seed: u64,
    pub backend: Backend,
    /// Stop threshold on `|δL|` (steady-state mode).
    pub convergence_tol: f64,
}

impl SolverConfig {
    /// Steady-state defaults: `λ_k = 0.01·0.999^k`, ridge `1e-4`,
    /// convergence at `|δL| < 1e-2`.
    pub fn steady_state(max_steps: usize, seed: u64) -> Self {
        SolverConfig {
            mode: Mode::SteadyState,
            lr0: 0.01,
            lr_decay: 0.999,
            dt: 0.0,
            max_steps,
            tikhonov_eps: 1e-4,
            noise_eps: 0.0,
            noise_target: NoiseTarget::Derivatives,
            seed,
            backend: Backend::Exact,
            convergence_tol: 1e-2,
        }
    }

    /// Dynamics defaults: fixed `λ = dt`, ridge `1e-4`, no early stop.
    pub fn dynamics(dt: f64, max_steps: usize, seed: u64) -> Self {
        SolverConfig {
            mode: Mode::Dynamics,
            lr0: 0.01,
            lr_decay: 1.0,
            dt,
            max_steps,
            tikhonov_eps: 1e-4,
            noise_eps: 0.0,
            noise_target: NoiseTarget::Derivatives,
            seed,
            backend: Backend::Exact,
            convergence_tol: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) && self.mode == Mode::SteadyState {
            return Err(Error::BackendConfig("lr0 must be positive".into()));
        }
        if self.mode == Mode::Dynamics && !(self.dt > 0.0) {
            return Err(Error::BackendConfig(
                "dt must be positive in dynamics mode".into(),
            ));
        }
        if self.tikhonov_eps < 0.0 || self.noise_eps < 0.0 {
            return Err(Error::BackendConfig(
                "tikhonov_eps and noise_eps must be non-negative".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::BackendConfig("max_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate at `step`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        match self.mode {
            Mode::SteadyState => self.lr0 * self.lr_decay.powi(step as i32),
            Mode::Dynamics => self.dt,
        }
    }
}

/// One row of the training trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub step: usize,
    /// Simulated time in dynamics mode, `None` in steady-state mode.
    pub time: Option<f64>,
    /// Values aligned with the observable list passed to [`run`].
    pub observables: Vec<f64>,
    pub delta_l_re: f64,
    pub delta_l_im: f64,
    /// `‖S·(ΔΘ/λ) − f‖₂` of the linear solve.
    pub sr_residual: f64,
    /// The regularized solve failed and a truncated pseudo-inverse was
    /// used instead.
    pub pinv_fallback: bool,
    /// The update produced non-finite parameters; the run stopped here.
    pub non_finite_abort: bool,
}

/// Contract a state, its derivatives, and `Lρ` into `S` and `f`.
///
/// All inputs are taken as-is (no normalization applied yet); the state is
/// scaled to unit HS norm internally and the derivatives and `Lρ` are
/// scaled by the same factor, which by linearity is exact.
pub fn contract_system(rho: &CMat, derivs: &[CMat], lrho: &CMat) -> Result<SrSystem> {
    let norm = fro_norm(rho);
    if norm == 0.0 {
        return Err(Error::Linalg("state has zero Hilbert-Schmidt norm".into()));
    }
    let inv = 1.0 / (norm * norm);
    let p = derivs.len();
    // ⟨∂_μρ, ρ⟩ and ⟨∂_μρ, Lρ⟩, scaled by 1/‖ρ‖².
    let proj: Vec<crate::linalg::C64> =
        derivs.iter().map(|d| hs_inner(d, rho) * inv).collect();
    let rho_l = hs_inner(rho, lrho) * inv;
    let mut s = Array2::zeros((p, p));
    for mu in 0..p {
        for nu in mu..p {
            let gram = hs_inner(&derivs[mu], &derivs[nu]) * inv;
            let val = gram.re - (proj[mu].conj() * proj[nu]).re;
            s[[mu, nu]] = val;
            s[[nu, mu]] = val;
        }
    }
    let mut f = Array1::zeros(p);
    for mu in 0..p {
        f[mu] = (hs_inner(&derivs[mu], lrho) * inv).re - (proj[mu].conj() * rho_l).re;
    }
    Ok(SrSystem { s, f })
}

/// Exact-backend assembly: feedforward, all parameter-shift derivatives,
/// and dense contraction against `Lρ`.
pub fn assemble_exact(
    m: &LindbladModel,
    topo: &NetworkTopology,
    params: &ParamVector,
) -> Result<SrSystem> {
    let eval = evaluate_with_derivatives(topo, params)?;
    let lrho = m.apply_liouvillian(eval.rho.mat());
    contract_system(eval.rho.mat(), &eval.derivs, &lrho)
}

/// Add i.i.d. `N(0, eps²)` noise to the real and imaginary part of every
/// entry of every derivative matrix. `eps = 0` leaves the input untouched.
pub fn inject_noise_derivs(derivs: &mut [CMat], eps: f64, rng: &mut impl Rng) {
    if eps == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, eps).expect("eps validated non-negative");
    for d in derivs.iter_mut() {
        for z in d.iter_mut() {
            z.re += normal.sample(rng);
            z.im += normal.sample(rng);
        }
    }
}

/// Add i.i.d. `N(0, eps²)` noise to every entry of `S` (kept symmetric by
/// perturbing only the upper triangle) and `f`.
pub fn inject_noise_system(sys: &mut SrSystem, eps: f64, rng: &mut impl Rng) {
    if eps == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, eps).expect("eps validated non-negative");
    let p = sys.f.len();
    for mu in 0..p {
        for nu in mu..p {
            let e = normal.sample(rng);
            sys.s[[mu, nu]] += e;
            if nu != mu {
                sys.s[[nu, mu]] += e;
            }
        }
    }
    for v in sys.f.iter_mut() {
        *v += normal.sample(rng);
    }
}

/// Result of one linear solve.
#[derive(Debug, Clone)]
pub struct Update {
    /// Parameter increment `λ (S + εI)⁻¹ f`.
    pub delta: Array1<f64>,
    /// True when the factorization failed and a truncated pseudo-inverse
    /// (relative cutoff 1e-10) was used.
    pub pinv_fallback: bool,
}

/// Solve `(S + eps·I) x = f` and return `lr·x`.
///
/// A symmetric factorization is attempted first; if it fails or returns
/// non-finite values, the update falls back to a spectral pseudo-inverse
/// that discards eigenvalues below `1e-10` of the largest.
pub fn solve_update(sys: &SrSystem, lr: f64, eps: f64) -> Result<Update> {
    if sys.s.iter().chain(sys.f.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SR system entries"));
    }
    if eps < 0.0 {
        return Err(Error::BackendConfig("ridge must be non-negative".into()));
    }
    let p = sys.f.len();
    let mut a = sys.s.clone();
    for i in 0..p {
        a[[i, i]] += eps;
    }
    if let Ok(x) = a.solveh(&sys.f) {
        if x.iter().all(|v| v.is_finite()) {
            return Ok(Update { delta: x * lr, pinv_fallback: false });
        }
    }
    // Spectral pseudo-inverse of the ridged matrix.
    let (vals, vecs) = a
        .eigh(UPLO::Upper)
        .map_err(|e| Error::Linalg(format!("eigendecomposition failed: {e}")))?;
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = scale * 1e-10;
    let mut x = Array1::zeros(p);
    for (k, &w) in vals.iter().enumerate() {
        if w.abs() <= cutoff {
            continue;
        }
        let col = vecs.column(k);
        let coeff = col.dot(&sys.f) / w;
        x = x + col.to_owned() * coeff;
    }
    Ok(Update { delta: x * lr, pinv_fallback: true })
}

/// `δL = ⟨ρ, Lρ⟩ / ⟨ρ, ρ⟩`; vanishes exactly at a steady state.
pub fn delta_l(m: &LindbladModel, rho: &DensityMatrix) -> crate::linalg::C64 {
    let lrho = m.apply_liouvillian(rho.mat());
    hs_inner(rho.mat(), &lrho) / hs_inner(rho.mat(), rho.mat()).re
}

/// Outcome of a full training run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<TrajectoryRecord>,
    /// Parameters after the last applied update.
    pub params: ParamVector,
    /// Network state at the last recorded step.
    pub rho: DensityMatrix,
    /// True when the run stopped on `|δL| < convergence_tol`.
    pub converged: bool,
}

/// Initial parameters of a run: uniform in `[-0.01, 0.01]` (near-identity
/// gates), drawn from the dedicated initialization stream of `seed`.
pub fn initial_params(topo: &NetworkTopology, seed: u64) -> ParamVector {
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    init_rng.set_stream(1);
    ParamVector::random(topo, &mut init_rng, 0.01)
}

/// Run the training loop.
///
/// Parameters start from [`initial_params`]; noise and sampling use
/// independent streams of the seed, so enabling one never shifts another.
/// Each iteration evaluates the state, records the observables, `δL`, and
/// the solve residual, then applies the update; the loop stops at
/// `max_steps`, on convergence (steady-state mode), or with a flagged
/// diagnostic record if an update stops being finite.
pub fn run(
    cfg: &SolverConfig,
    m: &LindbladModel,
    topo: &NetworkTopology,
    observables: &[Observable],
) -> Result<RunResult> {
    cfg.validate()?;
    if topo.output_qubits() != m.n_sites() {
        return Err(Error::DimMismatch(topo.output_qubits(), m.n_sites()));
    }
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(2);
    let mut backend_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    backend_rng.set_stream(3);

    let mut params = initial_params(topo, cfg.seed);
    let mut records = Vec::new();
    let mut converged = false;
    let mut rho = DensityMatrix::maximally_mixed(m.n_sites());

    for step in 0..cfg.max_steps {
        let lr = cfg.learning_rate(step);
        let time = match cfg.mode {
            Mode::Dynamics => Some(step as f64 * cfg.dt),
            Mode::SteadyState => None,
        };

        let mut eval = evaluate_with_derivatives(topo, &params)?;
        rho = eval.rho.clone();
        let obs_values: Vec<f64> =
            observables.iter().map(|o| o.expectation(rho.mat())).collect();
        let dl = delta_l(m, &rho);

        if cfg.noise_eps > 0.0 && cfg.noise_target == NoiseTarget::Derivatives {
            inject_noise_derivs(&mut eval.derivs, cfg.noise_eps, &mut noise_rng);
        }
        let mut sys = match cfg.backend {
            Backend::Exact => {
                let lrho = m.apply_liouvillian(rho.mat());
                contract_system(rho.mat(), &eval.derivs, &lrho)?
            }
            Backend::Mcmc { n_samples, burn_in } => {
                let state = &eval.rho;
                let derivs = &eval.derivs;
                let rho_elem = |l: &crate::pauli::SpinConfig, r: &crate::pauli::SpinConfig| {
                    state.element(l, r)
                };
                let deriv_elem =
                    |mu: usize, l: &crate::pauli::SpinConfig, r: &crate::pauli::SpinConfig| {
                        derivs[mu][[l.index(), r.index()]]
                    };
                let local_est = |l: &crate::pauli::SpinConfig, r: &crate::pauli::SpinConfig| {
                    m.local_estimator(&rho_elem, l, r)
                };
                crate::mcmc::estimate_sr_from_elements(
                    m.n_sites(),
                    topo.param_len(),
                    &rho_elem,
                    &deriv_elem,
                    &local_est,
                    n_samples,
                    burn_in,
                    &crate::mcmc::MoveSet::default(),
                    m.nn_bonds(),
                    &mut backend_rng,
                )?
                .sys
            }
            Backend::Shots { shots } => {
                let shot_cfg =
                    crate::shots::ShotConfig { shots, seed: backend_rng.random::<u64>() };
                crate::shots::assemble_shots(m, topo, &params, &shot_cfg)?
            }
        };
        if cfg.noise_eps > 0.0 && cfg.noise_target == NoiseTarget::SystemEntries {
            inject_noise_system(&mut sys, cfg.noise_eps, &mut noise_rng);
        }

        let update = solve_update(&sys, lr, cfg.tikhonov_eps)?;
        let residual = {
            let x = &update.delta / lr;
            let r = sys.s.dot(&x) - &sys.f;
            r.dot(&r).sqrt()
        };
        records.push(TrajectoryRecord {
            step,
            time,
            observables: obs_values,
            delta_l_re: dl.re,
            delta_l_im: dl.im,
            sr_residual: residual,
            pinv_fallback: update.pinv_fallback,
            non_finite_abort: false,
        });

        if cfg.mode == Mode::SteadyState && dl.norm() < cfg.convergence_tol {
            converged = true;
            break;
        }
        if params.step(&update.delta).is_err() {
            records.push(TrajectoryRecord {
                step: step + 1,
                time: match cfg.mode {
                    Mode::Dynamics => Some((step + 1) as f64 * cfg.dt),
                    Mode::SteadyState => None,
                },
                observables: vec![f64::NAN; observables.len()],
                delta_l_re: f64::NAN,
                delta_l_im: f64::NAN,
                sr_residual: f64::NAN,
                pinv_fallback: false,
                non_finite_abort: true,
            });
            break;
        }
    }

    Ok(RunResult { records, params, rho, converged })
}
