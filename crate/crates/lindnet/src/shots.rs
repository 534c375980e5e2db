//! Interference-circuit estimators for state overlaps and operator traces,
//! with optional finite-shot statistics.
//!
//! Every quantity the reconfiguration update needs — the metric `S`, the
//! force `f`, and the normalization `Tr[ρ²]` — reduces to two trace shapes:
//! `Tr[a·b]` between two network states, and `Tr[a·O₁·b·O₂]` with unitary
//! Pauli insertions. Both are measurable by a Hadamard test: prepare the
//! two states side by side with one ancilla, run controlled operations off
//! the ancilla, close with a Hadamard, and read the ancilla ground-state
//! population `P(0)`.
//!
//! This module simulates those circuits densely on the full
//! `ancilla ⊗ A ⊗ B` register — no closed-form shortcuts — and then either
//! returns the exact `P(0)` (infinite-shot limit) or replaces it with a
//! binomial frequency at a finite shot budget. [`assemble_shots`] builds the
//! complete `S`/`f` system from these primitives alone, so its exact mode
//! doubles as an independent cross-check of the dense contraction path.

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::linalg::{c, dagger, embed_unitary, kron, CMat, C64};
use crate::lindblad::LindbladModel;
use crate::network::{feedforward, feedforward_shifted, NetworkTopology, ParamVector};
use crate::pauli::{PauliOp, PauliString};
use crate::solver::SrSystem;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use std::f64::consts::FRAC_PI_2;

/// Shot budget of a single circuit evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShotCount {
    /// Infinite-shot limit: use the exact outcome probability.
    Exact,
    /// Draw this many Bernoulli outcomes from the exact probability.
    Finite(u64),
}

/// Configuration of a circuit-based `S`/`f` assembly.
///
/// Each circuit evaluation inside [`assemble_shots`] samples from its own
/// RNG stream derived from `seed` (stream = evaluation index), so results
/// are deterministic and independent of evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShotConfig {
    /// Shots per circuit evaluation.
    pub shots: ShotCount,
    /// Base seed for the per-circuit streams.
    pub seed: u64,
}

impl ShotConfig {
    /// Infinite-shot (noise-free) configuration.
    pub fn exact() -> Self {
        ShotConfig { shots: ShotCount::Exact, seed: 0 }
    }

    /// Finite-shot configuration.
    pub fn finite(shots: u64, seed: u64) -> Self {
        ShotConfig { shots: ShotCount::Finite(shots), seed }
    }
}

/// Which quadrature of the trace the ancilla measures.
///
/// `Re` prepares the ancilla in `(|0⟩+|1⟩)/√2`, `Im` in `(|0⟩+i|1⟩)/√2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Re,
    Im,
}

/// Ancilla density matrix for the requested quadrature.
fn ancilla_density(part: Part) -> CMat {
    match part {
        Part::Re => ndarray::array![
            [c(0.5, 0.0), c(0.5, 0.0)],
            [c(0.5, 0.0), c(0.5, 0.0)]
        ],
        Part::Im => ndarray::array![
            [c(0.5, 0.0), c(0.0, -0.5)],
            [c(0.0, 0.5), c(0.5, 0.0)]
        ],
    }
}

/// Controlled swap of two qubits: basis `|control, p, q⟩` with the control
/// in the most significant position.
fn cswap8() -> CMat {
    let mut u = CMat::zeros((8, 8));
    for x in 0..2usize {
        for p in 0..2usize {
            for q in 0..2usize {
                let from = (x << 2) | (p << 1) | q;
                let to = if x == 0 { from } else { (x << 2) | (q << 1) | p };
                u[[to, from]] = c(1.0, 0.0);
            }
        }
    }
    u
}

/// Single-qubit Hadamard.
fn hadamard() -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    ndarray::array![[c(s, 0.0), c(s, 0.0)], [c(s, 0.0), c(-s, 0.0)]]
}

/// Validate that a Pauli string is usable as a controlled operation on an
/// `n`-qubit register: right width, Hermitian, unit-modulus coefficient.
fn check_control(o: &PauliString, n: usize) -> Result<()> {
    if o.n_qubits() != n {
        return Err(Error::DimMismatch(1 << o.n_qubits(), 1 << n));
    }
    if !o.is_hermitian() || (o.coeff.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::NonUnitaryControl);
    }
    Ok(())
}

/// Controlled version of `o` on the listed register qubits, embedded into
/// the full circuit register, with the ancilla (qubit 0) as control.
fn controlled_embed(total: usize, register: &[usize], o: &PauliString) -> Result<CMat> {
    let dim = 1usize << register.len();
    let mut block = CMat::zeros((2 * dim, 2 * dim));
    let dense = o.matrix();
    for i in 0..dim {
        block[[i, i]] = c(1.0, 0.0);
        for j in 0..dim {
            block[[dim + i, dim + j]] = dense[[i, j]];
        }
    }
    let mut qubits = vec![0];
    qubits.extend_from_slice(register);
    embed_unitary(total, &qubits, &block)
}

/// Simulate one measurement circuit densely and return `P(0)`.
///
/// Register layout: qubit 0 is the ancilla, qubits `1..=n` hold `a`,
/// qubits `n+1..=2n` hold `b`. The ancilla=1 branch applies `o_a` to the
/// first register and `o_b` to the second, then swaps the registers; the
/// closing Hadamard maps the accumulated phase onto the `|0⟩` population.
fn circuit_p0(
    a: &DensityMatrix,
    b: &DensityMatrix,
    o_a: Option<&PauliString>,
    o_b: Option<&PauliString>,
    part: Part,
) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch(a.dim(), b.dim()));
    }
    let n = a.n_qubits();
    let total = 2 * n + 1;
    let reg_a: Vec<usize> = (1..=n).collect();
    let reg_b: Vec<usize> = (n + 1..=2 * n).collect();

    let mut rho = kron(&kron(&ancilla_density(part), a.mat()), b.mat());
    let conjugate = |u: &CMat, rho: &mut CMat| {
        *rho = u.dot(rho).dot(&dagger(u));
    };

    if let Some(o) = o_a {
        check_control(o, n)?;
        let u = controlled_embed(total, &reg_a, o)?;
        conjugate(&u, &mut rho);
    }
    if let Some(o) = o_b {
        check_control(o, n)?;
        let u = controlled_embed(total, &reg_b, o)?;
        conjugate(&u, &mut rho);
    }
    for i in 0..n {
        let u = embed_unitary(total, &[0, 1 + i, 1 + n + i], &cswap8())?;
        conjugate(&u, &mut rho);
    }
    let h = embed_unitary(total, &[0], &hadamard())?;
    conjugate(&h, &mut rho);

    let half = 1usize << (total - 1);
    let p0: f64 = (0..half).map(|i| rho[[i, i]].re).sum();
    Ok(p0)
}

/// Replace an exact probability by a binomial frequency when shots are
/// finite; pass it through unchanged in the infinite-shot limit.
fn sample_p0(p0: f64, shots: ShotCount, rng: &mut impl Rng) -> Result<f64> {
    match shots {
        ShotCount::Exact => Ok(p0),
        ShotCount::Finite(0) => {
            Err(Error::BackendConfig("shot count must be at least 1".into()))
        }
        ShotCount::Finite(n) => {
            let p = p0.clamp(0.0, 1.0);
            let bin = Binomial::new(n, p)
                .map_err(|e| Error::BackendConfig(format!("binomial sampler: {e}")))?;
            Ok(bin.sample(rng) as f64 / n as f64)
        }
    }
}

/// Estimate `Tr[a·b]` from the swap-test circuit: `P(0) = ½ + ½Tr[ab]`,
/// inverted as `2P(0) − 1`. The output always lies in `[−1, 1]`.
pub fn overlap_test(
    a: &DensityMatrix,
    b: &DensityMatrix,
    shots: ShotCount,
    rng: &mut impl Rng,
) -> Result<f64> {
    let p0 = circuit_p0(a, b, None, None, Part::Re)?;
    Ok(2.0 * sample_p0(p0, shots, rng)? - 1.0)
}

/// Estimate one quadrature of `Tr[a·O·b]` from the controlled-operator
/// circuit: `P(0) = ½ ± ½(Re or −Im)`, inverted as `2P(0)−1` (`Re`) or
/// `1−2P(0)` (`Im`).
pub fn ctrl_o_test(
    a: &DensityMatrix,
    b: &DensityMatrix,
    o: &PauliString,
    part: Part,
    shots: ShotCount,
    rng: &mut impl Rng,
) -> Result<f64> {
    let p0 = circuit_p0(a, b, None, Some(o), part)?;
    let est = sample_p0(p0, shots, rng)?;
    Ok(match part {
        Part::Re => 2.0 * est - 1.0,
        Part::Im => 1.0 - 2.0 * est,
    })
}

/// Estimate one quadrature of `Tr[a·O₁·b·O₂]` from the two-operator
/// circuit. `O₂` is controlled on the first register and `O₁` on the
/// second, so the swapped product traces to `Tr[O₂·a·O₁·b]`.
pub fn ctrl_o1_o2_test(
    a: &DensityMatrix,
    b: &DensityMatrix,
    o1: &PauliString,
    o2: &PauliString,
    part: Part,
    shots: ShotCount,
    rng: &mut impl Rng,
) -> Result<f64> {
    let p0 = circuit_p0(a, b, Some(o2), Some(o1), part)?;
    let est = sample_p0(p0, shots, rng)?;
    Ok(match part {
        Part::Re => 2.0 * est - 1.0,
        Part::Im => 1.0 - 2.0 * est,
    })
}

/// Both quadratures of `Tr[a·O·b]` as one complex estimate.
pub fn ctrl_o_trace(
    a: &DensityMatrix,
    b: &DensityMatrix,
    o: &PauliString,
    shots: ShotCount,
    rng: &mut impl Rng,
) -> Result<C64> {
    let re = ctrl_o_test(a, b, o, Part::Re, shots, rng)?;
    let im = ctrl_o_test(a, b, o, Part::Im, shots, rng)?;
    Ok(c(re, im))
}

/// Per-circuit RNG streams derived from one base seed.
struct StreamRng {
    seed: u64,
    next: u64,
}

impl StreamRng {
    fn new(seed: u64) -> Self {
        StreamRng { seed, next: 0 }
    }

    /// Fresh generator for the next circuit evaluation.
    fn next(&mut self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.next);
        self.next += 1;
        r
    }
}

/// `Re Tr[a·(L b)]` assembled term by term from circuit estimates.
///
/// The generator splits into measurable pieces:
/// - every Hamiltonian Pauli term `c·P` contributes `2c·Im Tr[a·P·b]`
///   (the commutator collapses two traces into one imaginary part);
/// - each jump site contributes
///   `γ(¼[Re T_xx + Re T_yy − Im T_xy + Im T_yx] − ½Tr[ab] − ½Re Tr[a·Z·b])`,
///   where `T_uv = Tr[a·σᵘ·b·σᵛ]` comes from the two-operator circuit, the
///   lowering sandwich having been expanded over `σˣ`/`σʸ` and the
///   `σ⁺σ⁻` products over `(1+σᶻ)/2`.
fn re_trace_generator(
    m: &LindbladModel,
    a: &DensityMatrix,
    b: &DensityMatrix,
    shots: ShotCount,
    streams: &mut StreamRng,
) -> Result<f64> {
    let n = m.n_sites();
    let mut total = 0.0;
    for (string, coeff) in m.ham_terms() {
        total += 2.0 * coeff * ctrl_o_test(a, b, string, Part::Im, shots, &mut streams.next())?;
    }
    for &(site, gamma) in m.jumps() {
        let x = PauliString::single(n, site, PauliOp::X)?;
        let y = PauliString::single(n, site, PauliOp::Y)?;
        let z = PauliString::single(n, site, PauliOp::Z)?;
        let t_xx = ctrl_o1_o2_test(a, b, &x, &x, Part::Re, shots, &mut streams.next())?;
        let t_yy = ctrl_o1_o2_test(a, b, &y, &y, Part::Re, shots, &mut streams.next())?;
        let t_xy = ctrl_o1_o2_test(a, b, &x, &y, Part::Im, shots, &mut streams.next())?;
        let t_yx = ctrl_o1_o2_test(a, b, &y, &x, Part::Im, shots, &mut streams.next())?;
        let ov = overlap_test(a, b, shots, &mut streams.next())?;
        let z_re = ctrl_o_test(a, b, &z, Part::Re, shots, &mut streams.next())?;
        total += gamma
            * (0.25 * (t_xx + t_yy - t_xy + t_yx) - 0.5 * ov - 0.5 * z_re);
    }
    Ok(total)
}

/// Measure the full reconfiguration system from interference circuits.
///
/// The parameter-shift rule turns every derivative inner product into
/// differences of overlaps between angle-shifted network states, so `S`
/// needs only [`overlap_test`] runs over shifted-state pairs
/// (occurrence-summed for tied parameters) and `f` needs the generator
/// traces from [`ctrl_o_test`]/[`ctrl_o1_o2_test`] against the center
/// state. All entries carry the same `1/Tr[ρ²]` normalization as the dense
/// contraction path, itself measured with a swap test.
///
/// In `ShotCount::Exact` mode the output matches the dense assembly to
/// numerical precision; finite modes add independent binomial noise per
/// circuit.
pub fn assemble_shots(
    m: &LindbladModel,
    topo: &NetworkTopology,
    params: &ParamVector,
    cfg: &ShotConfig,
) -> Result<SrSystem> {
    let n_out = *topo.layer_sizes().last().expect("validated topology");
    if n_out != m.n_sites() {
        return Err(Error::DimMismatch(n_out, m.n_sites()));
    }
    let p = topo.param_len();
    let shots = cfg.shots;
    let mut streams = StreamRng::new(cfg.seed);

    let rho = feedforward(topo, params)?;

    // Angle-shifted states, one pair per gate occurrence of each parameter.
    let mut shifted: Vec<Vec<(DensityMatrix, DensityMatrix)>> = Vec::with_capacity(p);
    for mu in 0..p {
        let mut occ_states = Vec::new();
        for occ in topo.occurrences(mu)? {
            let plus = feedforward_shifted(topo, params, occ, FRAC_PI_2)?;
            let minus = feedforward_shifted(topo, params, occ, -FRAC_PI_2)?;
            occ_states.push((plus, minus));
        }
        shifted.push(occ_states);
    }

    let norm = overlap_test(&rho, &rho, shots, &mut streams.next())?;
    if norm <= 0.0 {
        return Err(Error::DegenerateShots(format!(
            "measured squared norm {norm} is not positive; raise the shot count"
        )));
    }
    let inv = 1.0 / norm;

    // Projections ⟨∂ρ, ρ⟩ as shifted-overlap differences (×½ later).
    let mut delta = vec![0.0; p];
    for mu in 0..p {
        for (plus, minus) in &shifted[mu] {
            delta[mu] += overlap_test(plus, &rho, shots, &mut streams.next())?
                - overlap_test(minus, &rho, shots, &mut streams.next())?;
        }
    }

    let mut s = Array2::zeros((p, p));
    for mu in 0..p {
        for nu in mu..p {
            let mut quad = 0.0;
            for (ap, am) in &shifted[mu] {
                for (bp, bm) in &shifted[nu] {
                    quad += overlap_test(ap, bp, shots, &mut streams.next())?
                        - overlap_test(ap, bm, shots, &mut streams.next())?
                        - overlap_test(am, bp, shots, &mut streams.next())?
                        + overlap_test(am, bm, shots, &mut streams.next())?;
                }
            }
            let val = 0.25 * (inv * quad - (inv * delta[mu]) * (inv * delta[nu]));
            s[[mu, nu]] = val;
            s[[nu, mu]] = val;
        }
    }

    let center = re_trace_generator(m, &rho, &rho, shots, &mut streams)?;
    let mut f = Array1::zeros(p);
    for mu in 0..p {
        let mut lsum = 0.0;
        for (plus, minus) in &shifted[mu] {
            lsum += re_trace_generator(m, plus, &rho, shots, &mut streams)?
                - re_trace_generator(m, minus, &rho, shots, &mut streams)?;
        }
        f[mu] = 0.5 * inv * lsum - (0.5 * inv * delta[mu]) * (inv * center);
    }

    Ok(SrSystem { s, f })
}
