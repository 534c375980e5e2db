//! Density matrices on `n`-qubit registers.

use crate::error::{Error, Result};
use crate::linalg::{c, eigh, qubits_for_dim, CMat, CVec, C64};
use crate::pauli::SpinConfig;

/// Hermitian, unit-trace density matrix on `n` qubits, stored densely.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    n_qubits: usize,
    mat: CMat,
}

impl DensityMatrix {
    /// Wrap a matrix after checking shape, Hermiticity, and unit trace.
    ///
    /// Positivity is not verified here (it costs an eigendecomposition);
    /// use [`DensityMatrix::min_eigenvalue`] where the check matters.
    pub fn from_matrix(mat: CMat) -> Result<Self> {
        let n = qubits_for_dim(mat.nrows())?;
        if mat.ncols() != mat.nrows() {
            return Err(Error::DimMismatch(mat.nrows(), mat.ncols()));
        }
        let dim = mat.nrows();
        let mut herm_err = 0.0f64;
        for i in 0..dim {
            for j in i..dim {
                herm_err = herm_err.max((mat[[i, j]] - mat[[j, i]].conj()).norm());
            }
        }
        if herm_err > 1e-9 {
            return Err(Error::Linalg(format!("matrix not Hermitian (error {herm_err:.2e})")));
        }
        let tr: C64 = (0..dim).map(|i| mat[[i, i]]).sum();
        if (tr - c(1.0, 0.0)).norm() > 1e-9 {
            return Err(Error::Linalg(format!("trace {tr} differs from 1")));
        }
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("density matrix"));
        }
        Ok(DensityMatrix { n_qubits: n, mat })
    }

    /// Projector onto a pure state.
    pub fn pure(state: &CVec) -> Result<Self> {
        let n = qubits_for_dim(state.len())?;
        let norm_sqr: f64 = state.iter().map(|z| z.norm_sqr()).sum();
        if (norm_sqr - 1.0).abs() > 1e-9 {
            return Err(Error::Linalg(format!("state norm² {norm_sqr} differs from 1")));
        }
        let dim = state.len();
        let mut mat = CMat::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                mat[[i, j]] = state[i] * state[j].conj();
            }
        }
        Ok(DensityMatrix { n_qubits: n, mat })
    }

    /// Product of |+⟩ states on every qubit.
    pub fn all_plus(n_qubits: usize) -> Self {
        let dim = 1usize << n_qubits;
        let amp = c(1.0 / dim as f64, 0.0);
        DensityMatrix { n_qubits, mat: CMat::from_elem((dim, dim), amp) }
    }

    /// Computational basis state |index⟩⟨index|.
    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let dim = 1usize << n_qubits;
        assert!(index < dim, "basis index out of range");
        let mut mat = CMat::zeros((dim, dim));
        mat[[index, index]] = c(1.0, 0.0);
        DensityMatrix { n_qubits, mat }
    }

    /// Maximally mixed state I / 2^n.
    pub fn maximally_mixed(n_qubits: usize) -> Self {
        let dim = 1usize << n_qubits;
        let mut mat = CMat::zeros((dim, dim));
        for i in 0..dim {
            mat[[i, i]] = c(1.0 / dim as f64, 0.0);
        }
        DensityMatrix { n_qubits, mat }
    }

    /// Number of qubits.
    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// Borrow the dense matrix.
    pub fn mat(&self) -> &CMat {
        &self.mat
    }

    /// Consume into the dense matrix.
    pub fn into_mat(self) -> CMat {
        self.mat
    }

    /// Trace (should be 1 up to rounding).
    pub fn trace(&self) -> C64 {
        (0..self.dim()).map(|i| self.mat[[i, i]]).sum()
    }

    /// Largest Hermiticity violation |ρ_ij - conj(ρ_ji)|.
    pub fn hermiticity_error(&self) -> f64 {
        let dim = self.dim();
        let mut err = 0.0f64;
        for i in 0..dim {
            for j in i..dim {
                err = err.max((self.mat[[i, j]] - self.mat[[j, i]].conj()).norm());
            }
        }
        err
    }

    /// Smallest eigenvalue (negative values signal positivity loss).
    pub fn min_eigenvalue(&self) -> f64 {
        let (w, _) = eigh(&self.mat);
        w.first().copied().unwrap_or(0.0)
    }

    /// Matrix element ρ_{l,r} between two spin configurations.
    pub fn element(&self, l: &SpinConfig, r: &SpinConfig) -> C64 {
        debug_assert_eq!(l.n_sites(), self.n_qubits);
        debug_assert_eq!(r.n_sites(), self.n_qubits);
        self.mat[[l.index(), r.index()]]
    }
}
