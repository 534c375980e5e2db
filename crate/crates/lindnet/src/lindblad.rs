//! Dissipative spin models.
//!
//! A model is a Hamiltonian built from σ^z σ^z bonds and transverse σ^x
//! fields, plus uniform single-site decay: each site carries a jump operator
//! σ⁻ = |↓⟩⟨↑| with rate γ. The generator acts as
//!
//! ```text
//! Lρ = -i[H, ρ] + Σ_j γ_j ( F_j ρ F_j† - ½{F_j†F_j, ρ} ),   F_j = σ⁻_j.
//! ```
//!
//! Besides dense application, the module exposes the local matrix elements
//! ⟨l|·|r⟩ of every operator appearing in `L`, and a local estimator
//! `(Lρ)_{l,r} / ρ_{l,r}` that touches only O(n_sites) density-matrix
//! entries — the workhorse of the sampling backend.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::linalg::{c, dagger, kron, CMat, C64};
use crate::pauli::{PauliOp, PauliString, SpinConfig};

/// Hamiltonian term kinds that admit closed-form local matrix elements.
#[derive(Debug, Clone)]
enum HamTermKind {
    /// coeff · Π_j σ^z_j over the listed sites (diagonal).
    ZDiag(Vec<usize>),
    /// coeff · σ^x_j (single off-diagonal flip).
    XFlip(usize),
}

/// A dissipative transverse-field spin model with uniform σ⁻ decay.
#[derive(Debug, Clone)]
pub struct LindbladModel {
    n_sites: usize,
    ham_terms: Vec<(PauliString, f64)>,
    ham_kinds: Vec<HamTermKind>,
    jumps: Vec<(usize, f64)>,
    nn_bonds: Vec<(usize, usize)>,
    label: String,
    dense_ham: OnceLock<CMat>,
    dense_jumps: OnceLock<Vec<CMat>>,
}

impl LindbladModel {
    fn new(
        n_sites: usize,
        zz_bonds: Vec<((usize, usize), f64)>,
        field: f64,
        gamma: f64,
        nn_bonds: Vec<(usize, usize)>,
        label: String,
    ) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::InvalidModel("model needs at least one site".into()));
        }
        if gamma < 0.0 {
            return Err(Error::InvalidModel(format!("negative decay rate {gamma}")));
        }
        let mut ham_terms = Vec::new();
        let mut ham_kinds = Vec::new();
        for ((a, b), coeff) in zz_bonds {
            ham_terms.push((PauliString::two(n_sites, (a, PauliOp::Z), (b, PauliOp::Z))?, coeff));
            ham_kinds.push(HamTermKind::ZDiag(vec![a, b]));
        }
        if field != 0.0 {
            for j in 0..n_sites {
                ham_terms.push((PauliString::single(n_sites, j, PauliOp::X)?, field));
                ham_kinds.push(HamTermKind::XFlip(j));
            }
        }
        let jumps = (0..n_sites).map(|j| (j, gamma)).collect();
        Ok(LindbladModel {
            n_sites,
            ham_terms,
            ham_kinds,
            jumps,
            nn_bonds,
            label,
            dense_ham: OnceLock::new(),
            dense_jumps: OnceLock::new(),
        })
    }

    /// One-dimensional transverse-field Ising chain with uniform decay:
    /// `H = J Σ σ^z_j σ^z_{j+1} + h Σ σ^x_j`. The periodic flag adds the
    /// wrap-around bond when it is not already present.
    pub fn ising_1d(n_sites: usize, j: f64, h: f64, gamma: f64, periodic: bool) -> Result<Self> {
        let mut pairs = BTreeSet::new();
        for site in 0..n_sites.saturating_sub(1) {
            pairs.insert((site, site + 1));
        }
        if periodic && n_sites > 1 {
            let wrap = (0, n_sites - 1);
            pairs.insert(wrap);
        }
        let bonds: Vec<(usize, usize)> = pairs.into_iter().collect();
        let zz = bonds.iter().map(|&b| (b, j)).collect();
        let label = format!(
            "ising1d n={n_sites} j={j} h={h} gamma={gamma} periodic={periodic}"
        );
        Self::new(n_sites, zz, h, gamma, bonds, label)
    }

    /// Two-dimensional lattice with nearest-neighbor coupling `j1`, diagonal
    /// (next-nearest) coupling `j2`, transverse field `h`, and uniform decay.
    /// Sites are numbered row-major: site = row * lx + col. On periodic
    /// lattices, bonds that coincide as unordered pairs (small widths) are
    /// collapsed to a single bond.
    pub fn j1j2_2d(
        lx: usize,
        ly: usize,
        j1: f64,
        j2: f64,
        h: f64,
        gamma: f64,
        periodic: bool,
    ) -> Result<Self> {
        if lx == 0 || ly == 0 {
            return Err(Error::InvalidModel("lattice sides must be positive".into()));
        }
        let n_sites = lx * ly;
        let site = |row: usize, col: usize| row * lx + col;
        let mut nn = BTreeSet::new();
        let mut diag = BTreeSet::new();
        let insert = |set: &mut BTreeSet<(usize, usize)>, a: usize, b: usize| {
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        };
        for row in 0..ly {
            for col in 0..lx {
                let here = site(row, col);
                if periodic {
                    insert(&mut nn, here, site(row, (col + 1) % lx));
                    insert(&mut nn, here, site((row + 1) % ly, col));
                    insert(&mut diag, here, site((row + 1) % ly, (col + 1) % lx));
                    insert(&mut diag, here, site((row + 1) % ly, (col + lx - 1) % lx));
                } else {
                    if col + 1 < lx {
                        insert(&mut nn, here, site(row, col + 1));
                    }
                    if row + 1 < ly {
                        insert(&mut nn, here, site(row + 1, col));
                        if col + 1 < lx {
                            insert(&mut diag, here, site(row + 1, col + 1));
                        }
                        if col > 0 {
                            insert(&mut diag, here, site(row + 1, col - 1));
                        }
                    }
                }
            }
        }
        let nn_bonds: Vec<(usize, usize)> = nn.iter().copied().collect();
        let mut zz: Vec<((usize, usize), f64)> = nn.into_iter().map(|b| (b, j1)).collect();
        zz.extend(diag.into_iter().map(|b| (b, j2)));
        let label = format!(
            "j1j2 lx={lx} ly={ly} j1={j1} j2={j2} h={h} gamma={gamma} periodic={periodic}"
        );
        Self::new(n_sites, zz, h, gamma, nn_bonds, label)
    }

    /// Single site with only decay (and optional transverse field).
    pub fn single_site(h: f64, gamma: f64) -> Result<Self> {
        let label = format!("single-site h={h} gamma={gamma}");
        Self::new(1, Vec::new(), h, gamma, Vec::new(), label)
    }

    /// Number of lattice sites.
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Hamiltonian terms as (Pauli string, real coefficient).
    pub fn ham_terms(&self) -> &[(PauliString, f64)] {
        &self.ham_terms
    }

    /// Jump operators as (site, rate); every jump is σ⁻ on its site.
    pub fn jumps(&self) -> &[(usize, f64)] {
        &self.jumps
    }

    /// Nearest-neighbor bonds of the lattice graph (used by samplers).
    pub fn nn_bonds(&self) -> &[(usize, usize)] {
        &self.nn_bonds
    }

    /// Human-readable parameter summary (stable across runs).
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Dense Hamiltonian matrix (cached after first use).
    pub fn hamiltonian_matrix(&self) -> &CMat {
        self.dense_ham.get_or_init(|| {
            let dim = 1usize << self.n_sites;
            let mut h = CMat::zeros((dim, dim));
            for (string, coeff) in &self.ham_terms {
                h = h + string.matrix().mapv(|z| z * c(*coeff, 0.0));
            }
            h
        })
    }

    /// Dense jump operators, one per entry of [`LindbladModel::jumps`].
    pub fn jump_matrices(&self) -> &[CMat] {
        self.dense_jumps.get_or_init(|| {
            let lower = ndarray::array![
                [c(0.0, 0.0), c(0.0, 0.0)],
                [c(1.0, 0.0), c(0.0, 0.0)]
            ];
            let id = crate::linalg::identity(2);
            self.jumps
                .iter()
                .map(|&(site, _)| {
                    let mut m = ndarray::array![[c(1.0, 0.0)]];
                    for q in 0..self.n_sites {
                        m = kron(&m, if q == site { &lower } else { &id });
                    }
                    m
                })
                .collect()
        })
    }

    /// Dense application of the generator: `Lρ`.
    pub fn apply_liouvillian(&self, rho: &CMat) -> CMat {
        let h = self.hamiltonian_matrix();
        let mut out = h.dot(rho) - rho.dot(h);
        out.mapv_inplace(|z| z * c(0.0, -1.0));
        for (f, &(_, rate)) in self.jump_matrices().iter().zip(self.jumps.iter()) {
            if rate == 0.0 {
                continue;
            }
            let fd = dagger(f);
            let fdf = fd.dot(f);
            let jump = f.dot(rho).dot(&fd);
            let anti = fdf.dot(rho) + rho.dot(&fdf);
            out = out + jump.mapv(|z| z * c(rate, 0.0)) - anti.mapv(|z| z * c(0.5 * rate, 0.0));
        }
        out
    }

    /// Local estimator `(Lρ)_{l,r} / ρ_{l,r}` evaluated from O(n_sites)
    /// density-matrix entries supplied by `rho_elem`.
    pub fn local_estimator(
        &self,
        rho_elem: &dyn Fn(&SpinConfig, &SpinConfig) -> C64,
        l: &SpinConfig,
        r: &SpinConfig,
    ) -> Result<C64> {
        let rho_lr = rho_elem(l, r);
        if rho_lr.norm() == 0.0 {
            return Err(Error::ZeroAmplitude);
        }
        // Hamiltonian diagonal: -i Σ c (Π l_z - Π r_z).
        let mut diag = 0.0f64;
        // Hamiltonian flips: -i Σ h_j [ρ(l^j, r) - ρ(l, r^j)] / ρ_{l,r}.
        let mut flips = c(0.0, 0.0);
        for ((_, coeff), kind) in self.ham_terms.iter().zip(self.ham_kinds.iter()) {
            match kind {
                HamTermKind::ZDiag(sites) => {
                    let pl: f64 =
                        sites.iter().map(|&s| f64::from(l.spin(s))).product();
                    let pr: f64 =
                        sites.iter().map(|&s| f64::from(r.spin(s))).product();
                    diag += coeff * (pl - pr);
                }
                HamTermKind::XFlip(j) => {
                    let num = rho_elem(&l.flipped(*j), r) - rho_elem(l, &r.flipped(*j));
                    flips += c(*coeff, 0.0) * (num / rho_lr);
                }
            }
        }
        let mut acc = c(0.0, -1.0) * (c(diag, 0.0) + flips);
        // Dissipator: -γ/2 (δ_{l_j,+1} + δ_{r_j,+1})
        //             + γ δ_{l_j,-1} δ_{r_j,-1} ρ(l_j→+1, r_j→+1) / ρ_{l,r}.
        for &(j, rate) in &self.jumps {
            if rate == 0.0 {
                continue;
            }
            let up_count =
                f64::from(l.spin(j) > 0) + f64::from(r.spin(j) > 0);
            acc += c(-0.5 * rate * up_count, 0.0);
            if l.spin(j) < 0 && r.spin(j) < 0 {
                let src = rho_elem(&l.with_spin(j, 1), &r.with_spin(j, 1));
                acc += c(rate, 0.0) * (src / rho_lr);
            }
        }
        Ok(acc)
    }
}

/// Local operators with closed-form configuration-basis matrix elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalOp {
    /// σ^x on one site.
    X(usize),
    /// σ^z σ^z on a site pair.
    Zz(usize, usize),
    /// σ⁺σ⁻ (projector onto spin up) on one site.
    NumUp(usize),
    /// σ⁻ lowering operator on one site.
    Lower(usize),
    /// σ⁺ raising operator on one site.
    Raise(usize),
}

/// Matrix element ⟨l| op |r⟩ of a local operator.
pub fn local_element(op: LocalOp, l: &SpinConfig, r: &SpinConfig) -> C64 {
    debug_assert_eq!(l.n_sites(), r.n_sites());
    let agree_except = |skip: &[usize]| -> bool {
        (0..l.n_sites()).all(|k| skip.contains(&k) || l.spin(k) == r.spin(k))
    };
    let val = match op {
        LocalOp::X(j) => f64::from(r.spin(j) == -l.spin(j) && agree_except(&[j])),
        LocalOp::Zz(i, j) => {
            if agree_except(&[]) {
                f64::from(r.spin(i)) * f64::from(r.spin(j))
            } else {
                0.0
            }
        }
        LocalOp::NumUp(j) => f64::from(r.spin(j) > 0 && agree_except(&[])),
        LocalOp::Lower(j) => {
            f64::from(l.spin(j) < 0 && r.spin(j) > 0 && agree_except(&[j]))
        }
        LocalOp::Raise(j) => {
            f64::from(l.spin(j) > 0 && r.spin(j) < 0 && agree_except(&[j]))
        }
    };
    c(val, 0.0)
}
