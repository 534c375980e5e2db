//! Layered quantum-network ansatz for density matrices.
//!
//! The variational state is produced by a feedforward cascade of layer maps
//!
//! ```text
//! ρ^(i+1) = Tr_in[ U_i ( ρ^(i) ⊗ |+⟩⟨+|^{⊗ n_{i+1}} ) U_i† ],
//! ```
//!
//! where `U_i` is an ordered product of three-qubit perceptron unitaries,
//! each acting on two qubits of layer `i` and one fresh qubit of layer
//! `i+1`. The first layer starts from `|+⟩^{⊗ n_1}`; the reduced state of
//! the last layer is the ansatz output. A perceptron is parametrized by 12
//! Euler rotations `R(θ) = e^{iθ₁σ_z/2} e^{iθ₂σ_x/2} e^{iθ₃σ_z/2}` and 6
//! CNOTs in a fixed circuit layout, 36 angles in total.
//!
//! Derivatives are exact: shifting a rotation angle by ±π/2 and halving the
//! difference of the two outputs equals the derivative with respect to that
//! angle. Internally the equivalent commutator form is used — the shifted
//! difference of a rotation `e^{iθG/2}` collapses to `(i/2)[G, ·]` inserted
//! at the gate — so each tied parameter costs one sweep through the layer
//! rather than two full evaluations per occurrence.
//!
//! Everything here works on weighted ensembles of pure state vectors in the
//! joint space of two adjacent layers; no larger space is ever materialized.

use ndarray::Array1;

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::linalg::{c, embed_unitary, identity, CMat, CVec, C64};

/// How perceptrons wire layer `i` to layer `i+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    /// Output qubit `j` reads input qubits `j mod n_i` and `(j+1) mod n_i`;
    /// one perceptron per output qubit.
    LocalModulo,
    /// Every unordered input pair feeds every output qubit:
    /// `C(n_i, 2) · n_{i+1}` perceptrons per transition.
    Full,
}

/// Whether perceptrons within one layer transition share parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tying {
    /// Every perceptron has its own 36 angles.
    Untied,
    /// All perceptrons of a transition read the same 36 angles.
    TiedPerLayer,
}

/// Angles per perceptron: 12 Euler triples.
pub const ANGLES_PER_PERCEPTRON: usize = 36;

/// Elementary gates per perceptron: 36 rotations + 6 CNOTs.
const ELEM_GATES_PER_PERCEPTRON: usize = 42;

/// Hard cap on the joint qubit count of two adjacent layers.
const MAX_JOINT_QUBITS: usize = 20;

/// Wiring of one perceptron: two input-layer qubits and one output-layer
/// qubit (both indexed within their own layer).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wiring {
    pub in_a: usize,
    pub in_b: usize,
    pub out: usize,
}

/// One elementary gate in the joint space of a layer transition.
#[derive(Debug, Clone, Copy)]
enum ElemGate {
    /// `e^{iθσ_z/2}` on `q`, angle taken from perceptron slot `slot`.
    RotZ { q: usize, slot: usize },
    /// `e^{iθσ_x/2}` on `q`, angle taken from perceptron slot `slot`.
    RotX { q: usize, slot: usize },
    Cnot { control: usize, target: usize },
}

/// Pauli inserted by the commutator form of the shift rule.
#[derive(Debug, Clone, Copy)]
enum InsertPauli {
    Z,
    X,
}

/// Where the shift-rule Pauli lands for each of the 36 slots: number of
/// elementary gates of the perceptron applied before the insertion, the
/// Pauli axis, and which of the perceptron's three qubit roles it acts on.
#[derive(Debug, Clone, Copy)]
struct SlotInsertion {
    elem_offset: usize,
    pauli: InsertPauli,
    role: usize,
}

/// A gate with its angle resolved to a concrete 2×2 action.
#[derive(Debug, Clone, Copy)]
enum ResolvedGate {
    /// Diagonal phase gate: amplitude with bit 0 gets `ph0`, bit 1 `ph1`.
    Phase { q: usize, ph0: C64, ph1: C64 },
    /// Dense single-qubit unitary `[[u00, u01], [u10, u11]]`.
    Single { q: usize, u00: C64, u01: C64, u10: C64, u11: C64 },
    Cnot { control: usize, target: usize },
}

/// One layer transition: wiring, the flattened elementary gate list of all
/// perceptrons (joint-space qubit indices), and shift-rule metadata.
#[derive(Debug, Clone)]
pub struct Transition {
    n_in: usize,
    n_out: usize,
    wirings: Vec<Wiring>,
    gates: Vec<ElemGate>,
    insertions: [SlotInsertion; ANGLES_PER_PERCEPTRON],
}

impl Transition {
    fn new(n_in: usize, n_out: usize, wirings: Vec<Wiring>) -> Self {
        let mut gates = Vec::with_capacity(wirings.len() * ELEM_GATES_PER_PERCEPTRON);
        for w in &wirings {
            push_perceptron_gates(&mut gates, [w.in_a, w.in_b, n_in + w.out]);
        }
        Transition {
            n_in,
            n_out,
            wirings,
            gates,
            insertions: slot_insertions(),
        }
    }

    /// Qubits of the joint (input ⊗ fresh output) space.
    pub fn joint_qubits(&self) -> usize {
        self.n_in + self.n_out
    }

    /// Number of perceptrons in this transition.
    pub fn perceptron_count(&self) -> usize {
        self.wirings.len()
    }

    /// Perceptron wirings in application order.
    pub fn wirings(&self) -> &[Wiring] {
        &self.wirings
    }

    fn joint_qubit(&self, p: usize, role: usize) -> usize {
        let w = &self.wirings[p];
        match role {
            0 => w.in_a,
            1 => w.in_b,
            _ => self.n_in + w.out,
        }
    }

    /// Resolve all gate angles through `angle(perceptron, slot)`.
    fn resolve(&self, angle: &dyn Fn(usize, usize) -> f64) -> Vec<ResolvedGate> {
        let n = self.joint_qubits();
        self.gates
            .iter()
            .enumerate()
            .map(|(g, gate)| {
                let p = g / ELEM_GATES_PER_PERCEPTRON;
                match *gate {
                    ElemGate::RotZ { q, slot } => {
                        let half = 0.5 * angle(p, slot);
                        ResolvedGate::Phase {
                            q: n - 1 - q,
                            ph0: c(half.cos(), half.sin()),
                            ph1: c(half.cos(), -half.sin()),
                        }
                    }
                    ElemGate::RotX { q, slot } => {
                        let half = 0.5 * angle(p, slot);
                        ResolvedGate::Single {
                            q: n - 1 - q,
                            u00: c(half.cos(), 0.0),
                            u01: c(0.0, half.sin()),
                            u10: c(0.0, half.sin()),
                            u11: c(half.cos(), 0.0),
                        }
                    }
                    ElemGate::Cnot { control, target } => ResolvedGate::Cnot {
                        control: n - 1 - control,
                        target: n - 1 - target,
                    },
                }
            })
            .collect()
    }

    /// Tensor `psi` with `|+⟩^{⊗ n_out}` (fresh qubits are the low bits).
    fn lift(&self, psi: &CVec) -> CVec {
        let d_out = 1usize << self.n_out;
        let amp = (d_out as f64).sqrt().recip();
        let mut joint = CVec::zeros(psi.len() * d_out);
        for (i, z) in psi.iter().enumerate() {
            let scaled = z * c(amp, 0.0);
            for o in 0..d_out {
                joint[i * d_out + o] = scaled;
            }
        }
        joint
    }

    /// Accumulate `weight · Tr_in |a⟩⟨b|` into `acc` (an `n_out` matrix).
    fn accumulate_pair_trace(&self, acc: &mut CMat, a: &CVec, b: &CVec, weight: f64) {
        let d_out = 1usize << self.n_out;
        let d_in = 1usize << self.n_in;
        let w = c(weight, 0.0);
        for i in 0..d_in {
            let base = i * d_out;
            for o in 0..d_out {
                let left = a[base + o] * w;
                if left == c(0.0, 0.0) {
                    continue;
                }
                for o2 in 0..d_out {
                    acc[[o, o2]] += left * b[base + o2].conj();
                }
            }
        }
    }

    /// Map a weighted pure-state ensemble through the transition, returning
    /// the dense (Hermitian up to rounding) output-layer matrix.
    fn apply_ensemble(&self, resolved: &[ResolvedGate], ens: &StateEnsemble) -> CMat {
        let d_out = 1usize << self.n_out;
        let mut acc = CMat::zeros((d_out, d_out));
        for (w, v) in &ens.entries {
            let mut joint = self.lift(v);
            for g in resolved {
                apply_resolved(joint.as_slice_mut().unwrap(), g);
            }
            self.accumulate_pair_trace(&mut acc, &joint, &joint, *w);
        }
        // Exact hermitization: the pair trace of a vector with itself is
        // Hermitian in exact arithmetic; symmetrize away rounding noise.
        hermitize(&mut acc);
        acc
    }
}

/// Apply one resolved gate to a state vector in place. `g.q` counts bit
/// positions from the least significant end.
fn apply_resolved(v: &mut [C64], g: &ResolvedGate) {
    match *g {
        ResolvedGate::Phase { q, ph0, ph1 } => {
            let stride = 1usize << q;
            let mut base = 0;
            while base < v.len() {
                for i in base..base + stride {
                    v[i] *= ph0;
                    v[i + stride] *= ph1;
                }
                base += stride * 2;
            }
        }
        ResolvedGate::Single { q, u00, u01, u10, u11 } => {
            let stride = 1usize << q;
            let mut base = 0;
            while base < v.len() {
                for i in base..base + stride {
                    let a = v[i];
                    let b = v[i + stride];
                    v[i] = u00 * a + u01 * b;
                    v[i + stride] = u10 * a + u11 * b;
                }
                base += stride * 2;
            }
        }
        ResolvedGate::Cnot { control, target } => {
            let cbit = 1usize << control;
            let tbit = 1usize << target;
            for i in 0..v.len() {
                if i & cbit != 0 && i & tbit == 0 {
                    v.swap(i, i | tbit);
                }
            }
        }
    }
}

/// Apply a bare Pauli (Z or X) on bit position `q` (counted from the least
/// significant end) in place.
fn apply_insert_pauli(v: &mut [C64], q: usize, pauli: InsertPauli) {
    let bit = 1usize << q;
    match pauli {
        InsertPauli::Z => {
            for (i, z) in v.iter_mut().enumerate() {
                if i & bit != 0 {
                    *z = -*z;
                }
            }
        }
        InsertPauli::X => {
            for i in 0..v.len() {
                if i & bit == 0 {
                    v.swap(i, i | bit);
                }
            }
        }
    }
}

fn hermitize(m: &mut CMat) {
    let n = m.nrows();
    for i in 0..n {
        m[[i, i]] = c(m[[i, i]].re, 0.0);
        for j in i + 1..n {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]].conj());
            m[[i, j]] = avg;
            m[[j, i]] = avg.conj();
        }
    }
}

/// Push the 42 elementary gates of one perceptron. `q = [q0, q1, q2]` are
/// joint-space indices of the two inputs and the output. Circuit order:
/// `R(q0) R(q1) R(q2)`, then three blocks of
/// `[CNOT(q0→q2), CNOT(q1→q2), R(q0), R(q1), R(q2)]`; Euler triples are
/// consumed in declaration order. Each `R(θ₁,θ₂,θ₃)` acts as the matrix
/// product `Rz(θ₁)·Rx(θ₂)·Rz(θ₃)`, i.e. the θ₃ rotation is applied first.
fn push_perceptron_gates(gates: &mut Vec<ElemGate>, q: [usize; 3]) {
    let push_r = |gates: &mut Vec<ElemGate>, triple: usize| {
        let qubit = q[triple % 3];
        gates.push(ElemGate::RotZ { q: qubit, slot: 3 * triple + 2 });
        gates.push(ElemGate::RotX { q: qubit, slot: 3 * triple + 1 });
        gates.push(ElemGate::RotZ { q: qubit, slot: 3 * triple });
    };
    for t in 0..3 {
        push_r(gates, t);
    }
    for b in 0..3 {
        gates.push(ElemGate::Cnot { control: q[0], target: q[2] });
        gates.push(ElemGate::Cnot { control: q[1], target: q[2] });
        for r in 0..3 {
            push_r(gates, 3 + 3 * b + r);
        }
    }
}

/// Shift-rule insertion points for all 36 slots, relative to the start of a
/// perceptron's 42-gate list. Shifting an Euler angle by ±π/2 multiplies
/// the corresponding rotation by `e^{±iπG/4}`, and
/// `½[ρ(+π/2) − ρ(−π/2)] = (i/2)[G, ·]` inserted at that circuit position.
fn slot_insertions() -> [SlotInsertion; ANGLES_PER_PERCEPTRON] {
    let mut table = [SlotInsertion { elem_offset: 0, pauli: InsertPauli::Z, role: 0 }; 36];
    for triple in 0..12 {
        let off = elem_offset_of_triple(triple);
        let role = triple % 3;
        // slot layout per triple: θ1 = 3t, θ2 = 3t+1, θ3 = 3t+2.
        // circuit applies Rz(θ3), Rx(θ2), Rz(θ1) at offsets off, off+1, off+2.
        table[3 * triple + 2] =
            SlotInsertion { elem_offset: off, pauli: InsertPauli::Z, role };
        table[3 * triple + 1] =
            SlotInsertion { elem_offset: off + 2, pauli: InsertPauli::X, role };
        table[3 * triple] =
            SlotInsertion { elem_offset: off + 3, pauli: InsertPauli::Z, role };
    }
    table
}

/// Number of elementary gates preceding the first rotation of `triple`.
fn elem_offset_of_triple(triple: usize) -> usize {
    if triple < 3 {
        3 * triple
    } else {
        let block = (triple - 3) / 3;
        let within = (triple - 3) % 3;
        9 + block * 11 + 2 + 3 * within
    }
}

/// Weighted pure-state ensemble; weights may be negative when representing
/// Hermitian (non-positive) operators such as derivatives.
#[derive(Debug, Clone)]
struct StateEnsemble {
    entries: Vec<(f64, CVec)>,
}

impl StateEnsemble {
    fn pure(v: CVec) -> Self {
        StateEnsemble { entries: vec![(1.0, v)] }
    }

    /// Spectral decomposition of a Hermitian matrix. `keep_negative`
    /// controls whether negative eigenvalues are retained (derivative
    /// operators) or dropped as rounding noise (density matrices).
    fn from_hermitian(mat: &CMat, keep_negative: bool) -> Self {
        let (vals, vecs) = crate::linalg::eigh(mat);
        let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cutoff = scale * 1e-15;
        let mut entries = Vec::new();
        for (k, &w) in vals.iter().enumerate() {
            let keep = if keep_negative { w.abs() > cutoff } else { w > cutoff };
            if keep {
                entries.push((w, vecs.column(k).to_owned()));
            }
        }
        StateEnsemble { entries }
    }
}

/// `|+⟩^{⊗n}` as a state vector.
fn plus_vec(n: usize) -> CVec {
    let dim = 1usize << n;
    let amp = (dim as f64).sqrt().recip();
    CVec::from_elem(dim, c(amp, 0.0))
}

/// Network topology: layer widths, wiring rule, and parameter tying.
#[derive(Debug, Clone)]
pub struct NetworkTopology {
    layer_sizes: Vec<usize>,
    connectivity: Connectivity,
    tying: Tying,
    transitions: Vec<Transition>,
    /// Flat-parameter base index of each transition (Untied layout).
    untied_bases: Vec<usize>,
    param_len: usize,
}

/// Identifies one gate occurrence of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occurrence {
    pub transition: usize,
    pub perceptron: usize,
    pub slot: usize,
}

impl NetworkTopology {
    pub fn new(
        layer_sizes: Vec<usize>,
        connectivity: Connectivity,
        tying: Tying,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidTopology(format!(
                "need at least two layers, got {:?}",
                layer_sizes
            )));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidTopology("zero-width layer".into()));
        }
        for (i, &n) in layer_sizes[..layer_sizes.len() - 1].iter().enumerate() {
            if n < 2 {
                return Err(Error::InvalidTopology(format!(
                    "layer {i} has width {n}; perceptrons need two distinct input qubits"
                )));
            }
        }
        let mut transitions = Vec::new();
        for win in layer_sizes.windows(2) {
            let (n_in, n_out) = (win[0], win[1]);
            if n_in + n_out > MAX_JOINT_QUBITS {
                return Err(Error::InvalidTopology(format!(
                    "joint space of adjacent layers ({n_in}+{n_out}) exceeds {MAX_JOINT_QUBITS} qubits"
                )));
            }
            let mut wirings = Vec::new();
            match connectivity {
                Connectivity::LocalModulo => {
                    for j in 0..n_out {
                        wirings.push(Wiring { in_a: j % n_in, in_b: (j + 1) % n_in, out: j });
                    }
                }
                Connectivity::Full => {
                    for j in 0..n_out {
                        for a in 0..n_in {
                            for b in a + 1..n_in {
                                wirings.push(Wiring { in_a: a, in_b: b, out: j });
                            }
                        }
                    }
                }
            }
            transitions.push(Transition::new(n_in, n_out, wirings));
        }
        let mut untied_bases = Vec::with_capacity(transitions.len());
        let mut acc = 0usize;
        for t in &transitions {
            untied_bases.push(acc);
            acc += t.perceptron_count() * ANGLES_PER_PERCEPTRON;
        }
        let param_len = match tying {
            Tying::Untied => acc,
            Tying::TiedPerLayer => transitions.len() * ANGLES_PER_PERCEPTRON,
        };
        Ok(NetworkTopology {
            layer_sizes,
            connectivity,
            tying,
            transitions,
            untied_bases,
            param_len,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn tying(&self) -> Tying {
        self.tying
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Number of qubits of the output layer (= model sites it can serve).
    pub fn output_qubits(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Length of the flat parameter vector.
    pub fn param_len(&self) -> usize {
        self.param_len
    }

    /// Total perceptron count across all transitions.
    pub fn perceptron_count(&self) -> usize {
        self.transitions.iter().map(Transition::perceptron_count).sum()
    }

    /// Angle of perceptron `p` in transition `t` at `slot`, read from the
    /// flat parameter vector according to the tying scheme.
    fn angle(&self, values: &[f64], t: usize, p: usize, slot: usize) -> f64 {
        match self.tying {
            Tying::Untied => values[self.untied_bases[t] + p * ANGLES_PER_PERCEPTRON + slot],
            Tying::TiedPerLayer => values[t * ANGLES_PER_PERCEPTRON + slot],
        }
    }

    /// Flat index owning `(transition, perceptron, slot)`.
    fn flat_index(&self, t: usize, p: usize, slot: usize) -> usize {
        match self.tying {
            Tying::Untied => self.untied_bases[t] + p * ANGLES_PER_PERCEPTRON + slot,
            Tying::TiedPerLayer => t * ANGLES_PER_PERCEPTRON + slot,
        }
    }

    /// All gate occurrences of flat parameter `idx`.
    pub fn occurrences(&self, idx: usize) -> Result<Vec<Occurrence>> {
        if idx >= self.param_len {
            return Err(Error::ParamIndex(idx, self.param_len));
        }
        match self.tying {
            Tying::Untied => {
                let t = match self.untied_bases.binary_search(&idx) {
                    Ok(exact) => exact,
                    Err(ins) => ins - 1,
                };
                let rem = idx - self.untied_bases[t];
                Ok(vec![Occurrence {
                    transition: t,
                    perceptron: rem / ANGLES_PER_PERCEPTRON,
                    slot: rem % ANGLES_PER_PERCEPTRON,
                }])
            }
            Tying::TiedPerLayer => {
                let t = idx / ANGLES_PER_PERCEPTRON;
                let slot = idx % ANGLES_PER_PERCEPTRON;
                Ok((0..self.transitions[t].perceptron_count())
                    .map(|p| Occurrence { transition: t, perceptron: p, slot })
                    .collect())
            }
        }
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.param_len {
            return Err(Error::ParamCount { expected: self.param_len, got: params.len() });
        }
        Ok(())
    }

    fn resolve_transition(&self, values: &[f64], t: usize) -> Vec<ResolvedGate> {
        self.transitions[t].resolve(&|p, slot| self.angle(values, t, p, slot))
    }

    fn resolve_transition_shifted(
        &self,
        values: &[f64],
        t: usize,
        occ: Occurrence,
        delta: f64,
    ) -> Vec<ResolvedGate> {
        self.transitions[t].resolve(&|p, slot| {
            let base = self.angle(values, t, p, slot);
            if p == occ.perceptron && slot == occ.slot {
                base + delta
            } else {
                base
            }
        })
    }
}

/// Flat variational parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(topo: &NetworkTopology) -> Self {
        ParamVector { values: vec![0.0; topo.param_len()] }
    }

    /// Uniform random angles in `[-scale, scale]` (near-identity gates).
    pub fn random(topo: &NetworkTopology, rng: &mut impl rand::Rng, scale: f64) -> Self {
        let values = (0..topo.param_len())
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        ParamVector { values }
    }

    pub fn from_values(topo: &NetworkTopology, values: Vec<f64>) -> Result<Self> {
        if values.len() != topo.param_len() {
            return Err(Error::ParamCount { expected: topo.param_len(), got: values.len() });
        }
        Ok(ParamVector { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Component-wise in-place update `Θ += delta`.
    pub fn step(&mut self, delta: &Array1<f64>) -> Result<()> {
        if delta.len() != self.values.len() {
            return Err(Error::DimMismatch(delta.len(), self.values.len()));
        }
        for (v, d) in self.values.iter_mut().zip(delta.iter()) {
            *v += d;
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(())
    }
}

/// 2×2 Euler rotation `R(θ₁,θ₂,θ₃) = Rz(θ₁)·Rx(θ₂)·Rz(θ₃)` with
/// `Rz(θ) = e^{iθσ_z/2}`, `Rx(θ) = e^{iθσ_x/2}`.
pub fn euler_rotation(theta: [f64; 3]) -> CMat {
    let rz = |t: f64| {
        ndarray::array![
            [c((t / 2.0).cos(), (t / 2.0).sin()), c(0.0, 0.0)],
            [c(0.0, 0.0), c((t / 2.0).cos(), -(t / 2.0).sin())]
        ]
    };
    let t2 = theta[1] / 2.0;
    let rx = ndarray::array![
        [c(t2.cos(), 0.0), c(0.0, t2.sin())],
        [c(0.0, t2.sin()), c(t2.cos(), 0.0)]
    ];
    rz(theta[0]).dot(&rx).dot(&rz(theta[2]))
}

/// Dense 8×8 perceptron unitary for qubits `(q0, q1, q2) = (0, 1, 2)`,
/// built gate by gate from the canonical layout; the construction is
/// independent of the elementary-gate fast path and serves as its oracle.
pub fn perceptron_unitary(angles: &[f64; ANGLES_PER_PERCEPTRON]) -> CMat {
    let triple = |t: usize| [angles[3 * t], angles[3 * t + 1], angles[3 * t + 2]];
    let cnot = ndarray::array![
        [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
        [c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
        [c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
        [c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]
    ];
    let mut u = identity(8);
    let mut apply = |gate: &CMat, qubits: &[usize]| {
        let embedded = embed_unitary(3, qubits, gate).expect("fixed 3-qubit wiring");
        u = embedded.dot(&u);
    };
    for t in 0..3 {
        apply(&euler_rotation(triple(t)), &[t]);
    }
    for b in 0..3 {
        apply(&cnot, &[0, 2]);
        apply(&cnot, &[1, 2]);
        for r in 0..3 {
            apply(&euler_rotation(triple(3 + 3 * b + r)), &[r]);
        }
    }
    u
}

/// Dense reference layer map: `Tr_in[U (ρ_in ⊗ |+⟩⟨+|^{⊗n_out}) U†]` with
/// `U` the ordered product of the given perceptron unitaries (ascending
/// index, i.e. the first listed perceptron acts first).
pub fn layer_map(
    rho_in: &DensityMatrix,
    perceptrons: &[(Wiring, CMat)],
    n_out: usize,
) -> Result<DensityMatrix> {
    let n_in = rho_in.n_qubits();
    let n = n_in + n_out;
    if n > MAX_JOINT_QUBITS {
        return Err(Error::InvalidTopology(format!(
            "joint space of {n} qubits exceeds {MAX_JOINT_QUBITS}"
        )));
    }
    let plus = DensityMatrix::all_plus(n_out);
    let mut joint = crate::linalg::kron(rho_in.mat(), plus.mat());
    for (w, u) in perceptrons {
        let embedded = embed_unitary(n, &[w.in_a, w.in_b, n_in + w.out], u)?;
        joint = embedded.dot(&joint).dot(&crate::linalg::dagger(&embedded));
    }
    let traced: Vec<usize> = (0..n_in).collect();
    let mut out = crate::linalg::partial_trace(&joint, n, &traced)?;
    hermitize(&mut out);
    DensityMatrix::from_matrix(out)
}

/// Feedforward evaluation of the network.
pub fn feedforward(topo: &NetworkTopology, params: &ParamVector) -> Result<DensityMatrix> {
    topo.check_params(params)?;
    let mut ens = StateEnsemble::pure(plus_vec(topo.layer_sizes[0]));
    let mut mat = CMat::zeros((0, 0));
    for (t, trans) in topo.transitions.iter().enumerate() {
        let resolved = topo.resolve_transition(params.values(), t);
        mat = trans.apply_ensemble(&resolved, &ens);
        if t + 1 < topo.transitions.len() {
            ens = StateEnsemble::from_hermitian(&mat, false);
        }
    }
    DensityMatrix::from_matrix(mat)
}

/// Feedforward with one gate occurrence's angle shifted by `delta`.
pub fn feedforward_shifted(
    topo: &NetworkTopology,
    params: &ParamVector,
    occ: Occurrence,
    delta: f64,
) -> Result<DensityMatrix> {
    topo.check_params(params)?;
    if occ.transition >= topo.transitions.len()
        || occ.perceptron >= topo.transitions[occ.transition].perceptron_count()
        || occ.slot >= ANGLES_PER_PERCEPTRON
    {
        return Err(Error::ParamIndex(occ.slot, ANGLES_PER_PERCEPTRON));
    }
    let mut ens = StateEnsemble::pure(plus_vec(topo.layer_sizes[0]));
    let mut mat = CMat::zeros((0, 0));
    for (t, trans) in topo.transitions.iter().enumerate() {
        let resolved = if t == occ.transition {
            topo.resolve_transition_shifted(params.values(), t, occ, delta)
        } else {
            topo.resolve_transition(params.values(), t)
        };
        mat = trans.apply_ensemble(&resolved, &ens);
        if t + 1 < topo.transitions.len() {
            ens = StateEnsemble::from_hermitian(&mat, false);
        }
    }
    DensityMatrix::from_matrix(mat)
}

/// Output state plus the derivative of the output with respect to every
/// flat parameter.
#[derive(Debug, Clone)]
pub struct NetworkEvaluation {
    pub rho: DensityMatrix,
    /// `derivs[idx] = ∂ρ/∂Θ_idx`; Hermitian and traceless.
    pub derivs: Vec<CMat>,
}

/// Evaluate the network and all parameter derivatives in one pass.
///
/// Derivatives use the commutator form of the shift rule: for each slot the
/// Pauli insertion is applied at the cached prefix state of every
/// occurrence, occurrence contributions are combined left-to-right in a
/// single Horner sweep (they share the unmodified bra vector), and the
/// resulting layer-local derivative operator is propagated once through the
/// remaining transitions.
pub fn evaluate_with_derivatives(
    topo: &NetworkTopology,
    params: &ParamVector,
) -> Result<NetworkEvaluation> {
    evaluate_selected(topo, params, None)
}

/// Single-parameter derivative `∂ρ/∂Θ_idx`: the occurrence-summed shift
/// rule `½[ρ(θ+π/2) − ρ(θ−π/2)]` per gate occurrence.
pub fn parameter_shift_derivative(
    topo: &NetworkTopology,
    params: &ParamVector,
    idx: usize,
) -> Result<CMat> {
    if idx >= topo.param_len() {
        return Err(Error::ParamIndex(idx, topo.param_len()));
    }
    let eval = evaluate_selected(topo, params, Some(idx))?;
    Ok(eval.derivs.into_iter().nth(idx).unwrap())
}

fn evaluate_selected(
    topo: &NetworkTopology,
    params: &ParamVector,
    only: Option<usize>,
) -> Result<NetworkEvaluation> {
    topo.check_params(params)?;
    let values = params.values();
    let n_trans = topo.transitions.len();
    let resolved: Vec<Vec<ResolvedGate>> =
        (0..n_trans).map(|t| topo.resolve_transition(values, t)).collect();

    // Forward pass, keeping each layer's input ensemble.
    let mut ensembles: Vec<StateEnsemble> =
        vec![StateEnsemble::pure(plus_vec(topo.layer_sizes[0]))];
    let mut out_mat = CMat::zeros((0, 0));
    for (t, trans) in topo.transitions.iter().enumerate() {
        out_mat = trans.apply_ensemble(&resolved[t], &ensembles[t]);
        if t + 1 < n_trans {
            ensembles.push(StateEnsemble::from_hermitian(&out_mat, false));
        }
    }
    let rho = DensityMatrix::from_matrix(out_mat)?;
    let out_dim = 1usize << topo.output_qubits();

    let mut derivs = vec![CMat::zeros((out_dim, out_dim)); topo.param_len()];
    for (t, trans) in topo.transitions.iter().enumerate() {
        // Skip transitions that cannot own the requested parameter.
        if let Some(idx) = only {
            if topo.occurrences(idx)?[0].transition != t {
                continue;
            }
        }
        let m = trans.perceptron_count();
        let gates_per_perc = ELEM_GATES_PER_PERCEPTRON;
        let ens = &ensembles[t];
        // Prefix states after every elementary gate, per ensemble vector.
        let mut prefixes: Vec<Vec<CVec>> = Vec::with_capacity(ens.entries.len());
        for (_, v) in &ens.entries {
            let mut states = Vec::with_capacity(trans.gates.len() + 1);
            let mut cur = trans.lift(v);
            states.push(cur.clone());
            for g in &resolved[t] {
                apply_resolved(cur.as_slice_mut().unwrap(), g);
                states.push(cur.clone());
            }
            prefixes.push(states);
        }

        let d_out_layer = 1usize << trans.n_out;
        let mut handle_occurrences = |slot: usize, percs: &[usize], flat: usize| {
            let mut pair = CMat::zeros((d_out_layer, d_out_layer));
            for (k, (w, _)) in ens.entries.iter().enumerate() {
                let states = &prefixes[k];
                let full = states.last().unwrap();
                // Horner accumulation of Σ_p (suffix after p) · y_p where
                // y_p is the Pauli insertion propagated to the end of
                // perceptron p.
                let mut carry: Option<CVec> = None;
                for &p in percs {
                    if let Some(acc) = carry.as_mut() {
                        let lo = p * gates_per_perc;
                        for g in &resolved[t][lo..lo + gates_per_perc] {
                            apply_resolved(acc.as_slice_mut().unwrap(), g);
                        }
                    }
                    let ins = trans.insertions[slot];
                    let at = p * gates_per_perc + ins.elem_offset;
                    let mut y = states[at].clone();
                    let n_joint = trans.joint_qubits();
                    let bitpos = n_joint - 1 - trans.joint_qubit(p, ins.role);
                    apply_insert_pauli(y.as_slice_mut().unwrap(), bitpos, ins.pauli);
                    for g in &resolved[t][at..(p + 1) * gates_per_perc] {
                        apply_resolved(y.as_slice_mut().unwrap(), g);
                    }
                    match carry.as_mut() {
                        Some(acc) => *acc += &y,
                        None => carry = Some(y),
                    }
                }
                let mut a = carry.unwrap();
                // Propagate past any perceptrons after the last occurrence.
                let last = *percs.last().unwrap();
                for g in &resolved[t][(last + 1) * gates_per_perc..] {
                    apply_resolved(a.as_slice_mut().unwrap(), g);
                }
                trans.accumulate_pair_trace(&mut pair, &a, full, *w);
            }
            // (i/2)(P − P†): Hermitian, traceless derivative operator.
            let mut delta = CMat::zeros((d_out_layer, d_out_layer));
            for o in 0..d_out_layer {
                for o2 in 0..d_out_layer {
                    delta[[o, o2]] =
                        c(0.0, 0.5) * (pair[[o, o2]] - pair[[o2, o]].conj());
                }
            }
            // Propagate through the remaining transitions.
            let mut mat = delta;
            for u in t + 1..n_trans {
                let ens_u = StateEnsemble::from_hermitian(&mat, true);
                mat = topo.transitions[u].apply_ensemble(&resolved[u], &ens_u);
            }
            derivs[flat] = mat;
        };

        match topo.tying {
            Tying::TiedPerLayer => {
                let all: Vec<usize> = (0..m).collect();
                for slot in 0..ANGLES_PER_PERCEPTRON {
                    let flat = topo.flat_index(t, 0, slot);
                    if only.is_some_and(|idx| idx != flat) {
                        continue;
                    }
                    handle_occurrences(slot, &all, flat);
                }
            }
            Tying::Untied => {
                for p in 0..m {
                    for slot in 0..ANGLES_PER_PERCEPTRON {
                        let flat = topo.flat_index(t, p, slot);
                        if only.is_some_and(|idx| idx != flat) {
                            continue;
                        }
                        handle_occurrences(slot, &[p], flat);
                    }
                }
            }
        }
    }
    Ok(NetworkEvaluation { rho, derivs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dagger, max_abs, max_abs_diff};
    use crate::pauli::Observable;
    use crate::testing::rng;
    use rand::Rng;

    fn random_params(topo: &NetworkTopology, seed: u64, scale: f64) -> ParamVector {
        let mut r = rng(seed);
        ParamVector::random(topo, &mut r, scale)
    }

    /// Wiring plus dense unitaries for every perceptron of a transition.
    fn dense_perceptrons(
        topo: &NetworkTopology,
        params: &ParamVector,
        t: usize,
    ) -> Vec<(Wiring, CMat)> {
        let trans = &topo.transitions()[t];
        trans
            .wirings()
            .iter()
            .enumerate()
            .map(|(p, w)| {
                let mut angles = [0.0; ANGLES_PER_PERCEPTRON];
                for (slot, a) in angles.iter_mut().enumerate() {
                    *a = topo.angle(params.values(), t, p, slot);
                }
                (*w, perceptron_unitary(&angles))
            })
            .collect()
    }

    /// Dense feedforward built only from `layer_map` (the reference path).
    fn feedforward_dense(topo: &NetworkTopology, params: &ParamVector) -> DensityMatrix {
        let mut rho = DensityMatrix::all_plus(topo.layer_sizes()[0]);
        for t in 0..topo.transitions().len() {
            let percs = dense_perceptrons(topo, params, t);
            rho = layer_map(&rho, &percs, topo.layer_sizes()[t + 1]).unwrap();
        }
        rho
    }

    #[test]
    fn perceptron_unitary_is_unitary() {
        let mut r = rng(21);
        for _ in 0..5 {
            let mut angles = [0.0; 36];
            for a in angles.iter_mut() {
                *a = r.random_range(-3.0..3.0);
            }
            let u = perceptron_unitary(&angles);
            let err = max_abs_diff(&dagger(&u).dot(&u), &identity(8));
            assert!(err < 1e-12, "deviation from unitarity {err}");
        }
    }

    #[test]
    fn zero_angle_perceptron_is_a_single_cnot_pair() {
        let u = perceptron_unitary(&[0.0; 36]);
        let cnot02 = embed_unitary(3, &[0, 2], &cnot4()).unwrap();
        let cnot12 = embed_unitary(3, &[1, 2], &cnot4()).unwrap();
        let expect = cnot12.dot(&cnot02);
        assert!(max_abs_diff(&u, &expect) < 1e-14);
        // |110⟩ (index 6): both controls fire, the target flips twice.
        assert!((u[[6, 6]] - c(1.0, 0.0)).norm() < 1e-14);
    }

    fn cnot4() -> CMat {
        ndarray::array![
            [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
            [c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
            [c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
            [c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]
        ]
    }

    #[test]
    fn elementary_gate_expansion_matches_dense_unitary() {
        // Drive the flat gate list on basis vectors and compare to the
        // dense 8×8 construction; the two routes share no code.
        let mut r = rng(22);
        let mut angles = [0.0f64; 36];
        for a in angles.iter_mut() {
            *a = r.random_range(-3.0..3.0);
        }
        let mut gates = Vec::new();
        push_perceptron_gates(&mut gates, [0, 1, 2]);
        assert_eq!(gates.len(), ELEM_GATES_PER_PERCEPTRON);
        let resolved: Vec<ResolvedGate> = gates
            .iter()
            .map(|g| match *g {
                ElemGate::RotZ { q, slot } => {
                    let half = 0.5 * angles[slot];
                    ResolvedGate::Phase {
                        q: 2 - q,
                        ph0: c(half.cos(), half.sin()),
                        ph1: c(half.cos(), -half.sin()),
                    }
                }
                ElemGate::RotX { q, slot } => {
                    let half = 0.5 * angles[slot];
                    ResolvedGate::Single {
                        q: 2 - q,
                        u00: c(half.cos(), 0.0),
                        u01: c(0.0, half.sin()),
                        u10: c(0.0, half.sin()),
                        u11: c(half.cos(), 0.0),
                    }
                }
                ElemGate::Cnot { control, target } => {
                    ResolvedGate::Cnot { control: 2 - control, target: 2 - target }
                }
            })
            .collect();
        let dense = perceptron_unitary(&angles);
        for col in 0..8 {
            let mut v = CVec::zeros(8);
            v[col] = c(1.0, 0.0);
            for g in &resolved {
                apply_resolved(v.as_slice_mut().unwrap(), g);
            }
            for row in 0..8 {
                assert!(
                    (v[row] - dense[[row, col]]).norm() < 1e-13,
                    "column {col} row {row}"
                );
            }
        }
    }

    #[test]
    fn layer_map_with_zero_angles_outputs_plus_states() {
        let topo =
            NetworkTopology::new(vec![2, 3], Connectivity::LocalModulo, Tying::TiedPerLayer)
                .unwrap();
        let params = ParamVector::zeros(&topo);
        let rho = feedforward(&topo, &params).unwrap();
        let expect = DensityMatrix::all_plus(3);
        assert!(max_abs_diff(rho.mat(), expect.mat()) < 1e-13);
    }

    #[test]
    fn layer_map_final_x_rotation_fixes_plus() {
        // ρ_in = |00⟩⟨00|, one perceptron, only the last R(q2) triple set to
        // (0, π, 0): the output qubit ends as Rx(π)|+⟩ ∝ |+⟩.
        let mut angles = [0.0; 36];
        angles[34] = std::f64::consts::PI;
        let percs = vec![(Wiring { in_a: 0, in_b: 1, out: 0 }, perceptron_unitary(&angles))];
        let rho_in = DensityMatrix::basis(2, 0);
        let out = layer_map(&rho_in, &percs, 1).unwrap();
        assert!(max_abs_diff(out.mat(), DensityMatrix::all_plus(1).mat()) < 1e-13);
    }

    #[test]
    fn fast_feedforward_matches_dense_layer_maps() {
        let cases = [
            (vec![2, 3], Connectivity::LocalModulo, Tying::TiedPerLayer),
            (vec![3, 2], Connectivity::LocalModulo, Tying::Untied),
            (vec![2, 2, 3], Connectivity::LocalModulo, Tying::TiedPerLayer),
            (vec![3, 2], Connectivity::Full, Tying::Untied),
            (vec![2, 2], Connectivity::Full, Tying::TiedPerLayer),
        ];
        for (i, (sizes, conn, tying)) in cases.into_iter().enumerate() {
            let topo = NetworkTopology::new(sizes, conn, tying).unwrap();
            let params = random_params(&topo, 100 + i as u64, 2.0);
            let fast = feedforward(&topo, &params).unwrap();
            let dense = feedforward_dense(&topo, &params);
            let err = max_abs_diff(fast.mat(), dense.mat());
            assert!(err < 1e-12, "case {i}: {err}");
        }
    }

    #[test]
    fn feedforward_zero_params_cascades_to_plus_product() {
        for sizes in [vec![2, 2, 3, 3, 5], vec![2, 1]] {
            let topo =
                NetworkTopology::new(sizes.clone(), Connectivity::LocalModulo, Tying::TiedPerLayer)
                    .unwrap();
            let params = ParamVector::zeros(&topo);
            let rho = feedforward(&topo, &params).unwrap();
            let expect = DensityMatrix::all_plus(*sizes.last().unwrap());
            assert!(max_abs_diff(rho.mat(), expect.mat()) < 1e-12);
        }
    }

    #[test]
    fn feedforward_outputs_are_valid_states() {
        let topo =
            NetworkTopology::new(vec![2, 2, 3], Connectivity::LocalModulo, Tying::TiedPerLayer)
                .unwrap();
        for seed in 0..20 {
            let params = random_params(&topo, 200 + seed, 3.0);
            let rho = feedforward(&topo, &params).unwrap();
            assert!(rho.hermiticity_error() < 1e-12);
            assert!((rho.trace() - 1.0).norm() < 1e-12);
            assert!(rho.min_eigenvalue() > -1e-10);
        }
    }

    #[test]
    fn peak_joint_dimension_is_two_adjacent_layers() {
        let topo =
            NetworkTopology::new(vec![2, 2, 3, 3, 5], Connectivity::LocalModulo, Tying::TiedPerLayer)
                .unwrap();
        let peak = topo.transitions().iter().map(Transition::joint_qubits).max().unwrap();
        assert_eq!(peak, 8);
    }

    #[test]
    fn full_connectivity_perceptron_and_param_counts() {
        let topo = NetworkTopology::new(vec![3, 2], Connectivity::Full, Tying::Untied).unwrap();
        assert_eq!(topo.perceptron_count(), 6); // C(3,2) · 2
        assert_eq!(topo.param_len(), 6 * 36);
        let tied =
            NetworkTopology::new(vec![2, 2, 3], Connectivity::LocalModulo, Tying::TiedPerLayer)
                .unwrap();
        assert_eq!(tied.param_len(), 72);
        let occs = tied.occurrences(36 + 7).unwrap();
        assert_eq!(occs.len(), 3);
        assert!(occs.iter().all(|o| o.transition == 1 && o.slot == 7));
    }

    #[test]
    fn invalid_topologies_are_rejected() {
        assert!(NetworkTopology::new(vec![3], Connectivity::LocalModulo, Tying::Untied).is_err());
        assert!(
            NetworkTopology::new(vec![1, 2], Connectivity::LocalModulo, Tying::Untied).is_err()
        );
        assert!(
            NetworkTopology::new(vec![2, 0], Connectivity::LocalModulo, Tying::Untied).is_err()
        );
        let topo =
            NetworkTopology::new(vec![2, 2], Connectivity::LocalModulo, Tying::Untied).unwrap();
        assert!(ParamVector::from_values(&topo, vec![0.0; 10]).is_err());
        assert!(parameter_shift_derivative(&topo, &ParamVector::zeros(&topo), 999).is_err());
    }

    /// Five-point central finite difference of the full feedforward.
    fn finite_difference(
        topo: &NetworkTopology,
        params: &ParamVector,
        idx: usize,
        step: f64,
    ) -> CMat {
        let eval = |delta: f64| {
            let mut p = params.clone();
            p.values_mut()[idx] += delta;
            feedforward(topo, &p).unwrap().mat().clone()
        };
        // (f(-2h) - 8f(-h) + 8f(h) - f(2h)) / 12h
        let m2 = eval(-2.0 * step);
        let m1 = eval(-step);
        let p1 = eval(step);
        let p2 = eval(2.0 * step);
        let num = &m2 - &(m1.mapv(|z| z * c(8.0, 0.0)))
            + p1.mapv(|z| z * c(8.0, 0.0))
            - &p2;
        num.mapv(|z| z / c(12.0 * step, 0.0))
    }

    #[test]
    fn parameter_shift_matches_finite_differences() {
        for tying in [Tying::TiedPerLayer, Tying::Untied] {
            let topo =
                NetworkTopology::new(vec![2, 2, 3], Connectivity::LocalModulo, tying).unwrap();
            let params = random_params(&topo, 7, 1.5);
            let eval = evaluate_with_derivatives(&topo, &params).unwrap();
            let step = 1e-5;
            for idx in 0..topo.param_len() {
                let fd = finite_difference(&topo, &params, idx, step);
                let err = max_abs_diff(&eval.derivs[idx], &fd);
                assert!(err < 1e-7, "{tying:?} param {idx}: {err}");
            }
        }
    }

    #[test]
    fn derivatives_are_hermitian_and_traceless() {
        let topo =
            NetworkTopology::new(vec![2, 2, 3], Connectivity::LocalModulo, Tying::TiedPerLayer)
                .unwrap();
        let params = random_params(&topo, 31, 2.0);
        let eval = evaluate_with_derivatives(&topo, &params).unwrap();
        for (idx, d) in eval.derivs.iter().enumerate() {
            let herm = max_abs_diff(d, &dagger(d));
            let tr: C64 = (0..d.nrows()).map(|i| d[[i, i]]).sum();
            assert!(herm < 1e-12, "param {idx} hermiticity {herm}");
            assert!(tr.norm() < 1e-12, "param {idx} trace {tr}");
        }
    }

    #[test]
    fn tied_derivative_is_sum_of_untied_occurrences() {
        let tied =
            NetworkTopology::new(vec![2, 2], Connectivity::LocalModulo, Tying::TiedPerLayer)
                .unwrap();
        let untied =
            NetworkTopology::new(vec![2, 2], Connectivity::LocalModulo, Tying::Untied).unwrap();
        let tied_params = random_params(&tied, 17, 2.0);
        // Duplicate the 36 tied values for both perceptrons.
        let mut untied_values = tied_params.values().to_vec();
        untied_values.extend_from_slice(tied_params.values());
        let untied_params = ParamVector::from_values(&untied, untied_values).unwrap();
        for slot in [0usize, 5, 17, 35] {
            let d_tied = parameter_shift_derivative(&tied, &tied_params, slot).unwrap();
            let d0 = parameter_shift_derivative(&untied, &untied_params, slot).unwrap();
            let d1 = parameter_shift_derivative(&untied, &untied_params, 36 + slot).unwrap();
            let err = max_abs_diff(&d_tied, &(&d0 + &d1));
            assert!(err < 1e-12, "slot {slot}: {err}");
        }
    }

    #[test]
    fn shift_rule_matches_literal_shifted_feedforward() {
        // Single-occurrence parameters: the derivative must equal
        // ½[ρ(θ+π/2) − ρ(θ−π/2)] evaluated through the public shifted
        // feedforward.
        let topo =
            NetworkTopology::new(vec![2, 1], Connectivity::LocalModulo, Tying::Untied).unwrap();
        let params = random_params(&topo, 3, 2.0);
        for idx in [2usize, 13, 34] {
            let occ = topo.occurrences(idx).unwrap()[0];
            let plus = feedforward_shifted(&topo, &params, occ, std::f64::consts::FRAC_PI_2)
                .unwrap();
            let minus = feedforward_shifted(&topo, &params, occ, -std::f64::consts::FRAC_PI_2)
                .unwrap();
            let expect = (plus.mat() - minus.mat()).mapv(|z| z * c(0.5, 0.0));
            let got = parameter_shift_derivative(&topo, &params, idx).unwrap();
            assert!(max_abs_diff(&got, &expect) < 1e-12, "idx {idx}");
        }
    }

    #[test]
    fn rotations_after_the_last_entangler_on_traced_wires_are_dead() {
        // (2,1): the final-block R(q0) and R(q1) act on wires that are
        // traced out immediately afterwards; their angles cannot affect the
        // output.
        let topo =
            NetworkTopology::new(vec![2, 1], Connectivity::LocalModulo, Tying::Untied).unwrap();
        let params = random_params(&topo, 47, 2.0);
        let eval = evaluate_with_derivatives(&topo, &params).unwrap();
        for slot in 27..33 {
            let norm = max_abs(&eval.derivs[slot]);
            assert!(norm < 1e-13, "slot {slot} derivative magnitude {norm}");
        }
        // The final R(q2) on the surviving output wire is alive.
        let alive = max_abs(&eval.derivs[34]);
        assert!(alive > 1e-3, "slot 34 unexpectedly dead: {alive}");
    }

    #[test]
    fn translation_covariance_of_tied_cyclic_wiring() {
        // With tied angles and cyclic wiring, conjugating the perceptron
        // product by the one-site translation T maps perceptron j to
        // perceptron j+1 and cyclically advances the application order:
        // T ρ(order 0,1,2) T† = ρ(order 1,2,0). Strict site-by-site
        // equality of single-site expectations does NOT hold at generic
        // angles because the rotated order is a different product; the
        // covariance below is the exact symmetry.
        let topo =
            NetworkTopology::new(vec![3, 3], Connectivity::LocalModulo, Tying::TiedPerLayer)
                .unwrap();
        let params = random_params(&topo, 61, 2.0);
        let mut angles = [0.0; ANGLES_PER_PERCEPTRON];
        angles.copy_from_slice(&params.values()[..ANGLES_PER_PERCEPTRON]);
        let u = perceptron_unitary(&angles);
        let wiring = |j: usize| Wiring { in_a: j % 3, in_b: (j + 1) % 3, out: j };
        let order_a = vec![(wiring(0), u.clone()), (wiring(1), u.clone()), (wiring(2), u.clone())];
        let order_b = vec![(wiring(1), u.clone()), (wiring(2), u.clone()), (wiring(0), u.clone())];
        let rho_in = DensityMatrix::all_plus(3);
        let rho_a = layer_map(&rho_in, &order_a, 3).unwrap();
        let rho_b = layer_map(&rho_in, &order_b, 3).unwrap();
        // T |b0 b1 b2⟩ = |b2 b0 b1⟩ (site j's bit moves to site j+1).
        let mut t = CMat::zeros((8, 8));
        for i in 0..8usize {
            let (b0, b1, b2) = (i >> 2 & 1, i >> 1 & 1, i & 1);
            let shifted = b2 << 2 | b0 << 1 | b1;
            t[[shifted, i]] = c(1.0, 0.0);
        }
        let translated = t.dot(rho_a.mat()).dot(&dagger(&t));
        assert!(max_abs_diff(&translated, rho_b.mat()) < 1e-12);
        // The fast path evaluates order (0,1,2).
        let fast = feedforward(&topo, &params).unwrap();
        assert!(max_abs_diff(fast.mat(), rho_a.mat()) < 1e-12);
        // Non-vacuity: the two orders genuinely differ at these angles.
        assert!(max_abs_diff(rho_a.mat(), rho_b.mat()) > 1e-3);
    }

    #[test]
    fn observable_derivative_example_on_minimal_network() {
        // All angles zero except the θ₂ of the final R(q2); the output is
        // Rx(θ)|+⟩ up to CNOT action, and ⟨X⟩ stays at 1 with zero
        // derivative (Rx commutes with X), cross-checked by finite
        // differences at two angle values.
        let topo =
            NetworkTopology::new(vec![2, 1], Connectivity::LocalModulo, Tying::Untied).unwrap();
        let obs = Observable::parse("x(0)", 1).unwrap();
        for theta in [0.0, std::f64::consts::FRAC_PI_2] {
            let mut params = ParamVector::zeros(&topo);
            params.values_mut()[34] = theta;
            let rho = feedforward(&topo, &params).unwrap();
            assert!((obs.expectation(rho.mat()) - 1.0).abs() < 1e-12);
            let d = parameter_shift_derivative(&topo, &params, 34).unwrap();
            let d_obs = obs.expectation(&d);
            assert!(d_obs.abs() < 1e-12, "θ={theta}: d⟨X⟩ = {d_obs}");
        }
    }
}
