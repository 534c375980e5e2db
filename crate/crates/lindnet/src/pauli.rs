//! Pauli strings, spin configurations, and named observables.
//!
//! Spin convention: spin value `+1` on a site corresponds to basis bit `0`
//! (the σ^z = +1 eigenstate), spin `-1` to bit `1`. Site 0 is the most
//! significant bit of a basis index, matching [`crate::linalg`].

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{c, kron, CMat, C64};

/// Single-qubit Pauli operator label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PauliOp {
    I,
    X,
    Y,
    Z,
}

impl PauliOp {
    /// 2x2 matrix of the operator.
    pub fn matrix(self) -> CMat {
        match self {
            PauliOp::I => ndarray::array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]],
            PauliOp::X => ndarray::array![[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]],
            PauliOp::Y => ndarray::array![[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, 1.0), c(0.0, 0.0)]],
            PauliOp::Z => ndarray::array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]],
        }
    }

    fn from_char(ch: char) -> Option<Self> {
        match ch.to_ascii_uppercase() {
            'I' => Some(PauliOp::I),
            'X' => Some(PauliOp::X),
            'Y' => Some(PauliOp::Y),
            'Z' => Some(PauliOp::Z),
            _ => None,
        }
    }

    fn as_char(self) -> char {
        match self {
            PauliOp::I => 'I',
            PauliOp::X => 'X',
            PauliOp::Y => 'Y',
            PauliOp::Z => 'Z',
        }
    }

    /// Action on a single basis bit: returns (new bit, phase).
    #[inline]
    fn act_on_bit(self, bit: usize) -> (usize, C64) {
        match self {
            PauliOp::I => (bit, c(1.0, 0.0)),
            PauliOp::X => (1 - bit, c(1.0, 0.0)),
            // Y|0⟩ = i|1⟩, Y|1⟩ = -i|0⟩
            PauliOp::Y => (1 - bit, if bit == 0 { c(0.0, 1.0) } else { c(0.0, -1.0) }),
            PauliOp::Z => (bit, if bit == 0 { c(1.0, 0.0) } else { c(-1.0, 0.0) }),
        }
    }
}

/// A scaled tensor product of single-qubit Pauli operators.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliString {
    /// One operator per qubit, site 0 first.
    pub letters: Vec<PauliOp>,
    /// Overall complex coefficient.
    pub coeff: C64,
}

impl PauliString {
    /// Identity string on `n` qubits.
    pub fn identity(n: usize) -> Self {
        PauliString { letters: vec![PauliOp::I; n], coeff: c(1.0, 0.0) }
    }

    /// Single-site operator embedded in `n` qubits.
    pub fn single(n: usize, site: usize, op: PauliOp) -> Result<Self> {
        if site >= n {
            return Err(Error::QubitOutOfRange { index: site, n_qubits: n });
        }
        let mut s = Self::identity(n);
        s.letters[site] = op;
        Ok(s)
    }

    /// Two-site operator (same or different letters) embedded in `n` qubits.
    pub fn two(n: usize, a: (usize, PauliOp), b: (usize, PauliOp)) -> Result<Self> {
        if a.0 >= n {
            return Err(Error::QubitOutOfRange { index: a.0, n_qubits: n });
        }
        if b.0 >= n {
            return Err(Error::QubitOutOfRange { index: b.0, n_qubits: n });
        }
        if a.0 == b.0 {
            return Err(Error::DuplicateQubit(a.0));
        }
        let mut s = Self::identity(n);
        s.letters[a.0] = a.1;
        s.letters[b.0] = b.1;
        Ok(s)
    }

    /// Number of qubits the string acts on.
    pub fn n_qubits(&self) -> usize {
        self.letters.len()
    }

    /// Scale the coefficient.
    pub fn scaled(mut self, factor: C64) -> Self {
        self.coeff *= factor;
        self
    }

    /// Whether the string is a Hermitian operator (real coefficient).
    pub fn is_hermitian(&self) -> bool {
        self.coeff.im.abs() < 1e-14 * self.coeff.norm().max(1.0)
    }

    /// Dense matrix of the string (dimension 2^n).
    pub fn matrix(&self) -> CMat {
        let mut m = ndarray::array![[self.coeff]];
        for op in &self.letters {
            m = kron(&m, &op.matrix());
        }
        m
    }

    /// Monomial action on a basis index: `P|i⟩ = phase * |j⟩`.
    ///
    /// Pauli strings map computational basis states to single basis states,
    /// so operators never need dense expansion for basis arithmetic.
    pub fn act_on_basis(&self, index: usize) -> (usize, C64) {
        let n = self.letters.len();
        let mut out = index;
        let mut phase = self.coeff;
        for (site, op) in self.letters.iter().enumerate() {
            let shift = n - 1 - site;
            let bit = (index >> shift) & 1;
            let (new_bit, ph) = op.act_on_bit(bit);
            phase *= ph;
            if new_bit != bit {
                out ^= 1 << shift;
            }
        }
        (out, phase)
    }

    /// Trace of `rho * P`, computed through the monomial basis action.
    ///
    /// With `P|j⟩ = phase |i⟩`, column `j` of `P` has its only entry at row
    /// `i`, so `Tr(ρP) = Σ_j ρ_{j,i} P_{i,j} = Σ_j phase_j ρ_{j,i_j}`.
    pub fn trace_with(&self, rho: &CMat) -> C64 {
        let dim = rho.nrows();
        let mut acc = c(0.0, 0.0);
        for j in 0..dim {
            let (i, phase) = self.act_on_basis(j);
            acc += phase * rho[[j, i]];
        }
        acc
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeff != c(1.0, 0.0) {
            write!(f, "({}) ", self.coeff)?;
        }
        for op in &self.letters {
            write!(f, "{}", op.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    /// Parse a bare letter string such as `XXIZ` (coefficient 1).
    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        if trimmed.is_empty() {
            return Err(Error::Parse("empty Pauli string".into()));
        }
        let mut letters = Vec::with_capacity(trimmed.len());
        for ch in trimmed.chars() {
            match PauliOp::from_char(ch) {
                Some(op) => letters.push(op),
                None => {
                    return Err(Error::Parse(format!(
                        "invalid Pauli letter {ch:?} in {trimmed:?} (expected I, X, Y, or Z)"
                    )))
                }
            }
        }
        Ok(PauliString { letters, coeff: c(1.0, 0.0) })
    }
}

/// Expectation value `Tr(rho * obs)`, returned as its real part.
///
/// For Hermitian `obs` the trace is real up to rounding; the imaginary
/// residue is discarded.
pub fn expectation(rho: &CMat, obs: &PauliString) -> f64 {
    obs.trace_with(rho).re
}

/// Classical spin configuration: one value in {+1, -1} per site.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig(pub Vec<i8>);

impl SpinConfig {
    /// All-up configuration.
    pub fn all_up(n: usize) -> Self {
        SpinConfig(vec![1; n])
    }

    /// All-down configuration.
    pub fn all_down(n: usize) -> Self {
        SpinConfig(vec![-1; n])
    }

    /// Number of sites.
    pub fn n_sites(&self) -> usize {
        self.0.len()
    }

    /// Spin at `site` (+1 or -1).
    #[inline]
    pub fn spin(&self, site: usize) -> i8 {
        self.0[site]
    }

    /// Basis index: site j contributes bit 0 for spin +1 and bit 1 for
    /// spin -1, with site 0 as the most significant bit.
    pub fn index(&self) -> usize {
        let n = self.0.len();
        let mut idx = 0usize;
        for (j, &s) in self.0.iter().enumerate() {
            if s < 0 {
                idx |= 1 << (n - 1 - j);
            }
        }
        idx
    }

    /// Inverse of [`SpinConfig::index`].
    pub fn from_index(n: usize, index: usize) -> Self {
        let mut spins = vec![1i8; n];
        for (j, spin) in spins.iter_mut().enumerate() {
            if (index >> (n - 1 - j)) & 1 == 1 {
                *spin = -1;
            }
        }
        SpinConfig(spins)
    }

    /// Flip one site in place.
    pub fn flip(&mut self, site: usize) {
        self.0[site] = -self.0[site];
    }

    /// Copy with one site flipped.
    pub fn flipped(&self, site: usize) -> Self {
        let mut out = self.clone();
        out.flip(site);
        out
    }

    /// Copy with every listed site flipped.
    pub fn flipped_many(&self, sites: &[usize]) -> Self {
        let mut out = self.clone();
        for &s in sites {
            out.flip(s);
        }
        out
    }

    /// Copy with all sites flipped.
    pub fn flipped_all(&self) -> Self {
        SpinConfig(self.0.iter().map(|&s| -s).collect())
    }

    /// Copy with `site` forced to the given spin value.
    pub fn with_spin(&self, site: usize, spin: i8) -> Self {
        let mut out = self.clone();
        out.0[site] = spin;
        out
    }
}

/// A named, real-weighted sum of Pauli strings recorded along trajectories.
#[derive(Debug, Clone)]
pub struct Observable {
    /// Display / column name.
    pub name: String,
    /// Hermitian terms; values are summed.
    pub terms: Vec<PauliString>,
}

impl Observable {
    /// Site-averaged single-letter observable, e.g. (1/n) Σ_j σ^x_j.
    pub fn site_average(n: usize, op: PauliOp, name: impl Into<String>) -> Self {
        let w = c(1.0 / n as f64, 0.0);
        let terms = (0..n)
            .map(|j| PauliString::single(n, j, op).expect("site in range").scaled(w))
            .collect();
        Observable { name: name.into(), terms }
    }

    /// Dense expectation value Σ_k Tr(rho P_k).
    pub fn expectation(&self, rho: &CMat) -> f64 {
        self.terms.iter().map(|t| t.trace_with(rho).re).sum()
    }

    /// Parse an observable description for a system of `n` sites.
    ///
    /// Grammar (whitespace-insensitive, case-insensitive keywords):
    /// - `avg_x` | `avg_y` | `avg_z` — site-averaged single-site operator
    /// - `x(i)` | `y(i)` | `z(i)` — one site
    /// - `xx(i,j)` | `yy(i,j)` | `zz(i,j)` — two-site correlator
    /// - bare Pauli letters of length `n`, e.g. `XXIII`
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let name = text.trim().to_string();
        if name.is_empty() {
            return Err(Error::Parse("empty observable".into()));
        }
        let lower = name.to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("avg_") {
            let op = match rest {
                "x" => PauliOp::X,
                "y" => PauliOp::Y,
                "z" => PauliOp::Z,
                _ => {
                    return Err(Error::Parse(format!(
                        "unknown site average {name:?} (expected avg_x, avg_y, or avg_z)"
                    )))
                }
            };
            return Ok(Self::site_average(n, op, &name));
        }
        if let Some(open) = lower.find('(') {
            let close = lower.rfind(')').ok_or_else(|| {
                Error::Parse(format!("missing closing parenthesis in {name:?}"))
            })?;
            if close < open {
                return Err(Error::Parse(format!("malformed site list in {name:?}")));
            }
            let head = &lower[..open];
            let args: Vec<&str> =
                lower[open + 1..close].split(',').map(str::trim).collect();
            let parse_site = |s: &str| -> Result<usize> {
                let site: usize = s
                    .parse()
                    .map_err(|_| Error::Parse(format!("invalid site index {s:?} in {name:?}")))?;
                if site >= n {
                    return Err(Error::QubitOutOfRange { index: site, n_qubits: n });
                }
                Ok(site)
            };
            let single_letter = |s: &str| -> Result<PauliOp> {
                match s {
                    "x" => Ok(PauliOp::X),
                    "y" => Ok(PauliOp::Y),
                    "z" => Ok(PauliOp::Z),
                    _ => Err(Error::Parse(format!("unknown observable head {s:?} in {name:?}"))),
                }
            };
            return match (head.len(), args.len()) {
                (1, 1) => {
                    let op = single_letter(head)?;
                    let term = PauliString::single(n, parse_site(args[0])?, op)?;
                    Ok(Observable { name, terms: vec![term] })
                }
                (2, 2) => {
                    let mut chars = head.chars();
                    let (a, b) = (chars.next().unwrap(), chars.next().unwrap());
                    let op_a = single_letter(&a.to_string())?;
                    let op_b = single_letter(&b.to_string())?;
                    let (i, j) = (parse_site(args[0])?, parse_site(args[1])?);
                    let term = PauliString::two(n, (i, op_a), (j, op_b))?;
                    Ok(Observable { name, terms: vec![term] })
                }
                _ => Err(Error::Parse(format!(
                    "unsupported observable form {name:?} (expected head(i) or headpair(i,j))"
                ))),
            };
        }
        // Bare Pauli letter string.
        let string: PauliString = name.parse()?;
        if string.n_qubits() != n {
            return Err(Error::Parse(format!(
                "Pauli string {name:?} has {} letters, system has {n} sites",
                string.n_qubits()
            )));
        }
        Ok(Observable { name, terms: vec![string] })
    }
}
