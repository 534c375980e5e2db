//! Exact reference solutions on small lattices.
//!
//! The generator is materialized as a dense superoperator over
//! column-vectorized density matrices, `vec(|a⟩⟨b|) = |b⟩ ⊗ |a⟩`, so that
//!
//! ```text
//! vec(Lρ) = [ -i(I⊗H - Hᵀ⊗I) + Σ_j γ_j ( F̄_j⊗F_j - ½ I⊗F_j†F_j - ½ (F_j†F_j)ᵀ⊗I ) ] vec(ρ).
//! ```
//!
//! Steady states come from the full non-Hermitian spectrum (the eigenvector
//! with eigenvalue closest to zero), time evolution from classical
//! fourth-order Runge–Kutta. Both scale as `16^n_sites` in memory and are
//! guarded by [`MAX_ORACLE_SITES`]; they exist to validate the variational
//! machinery, not to replace it.

use ndarray_linalg::Eig;

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::linalg::{c, dagger, identity, kron, CMat, CVec, C64};
use crate::lindblad::LindbladModel;

/// Largest lattice the dense-superoperator routines accept.
pub const MAX_ORACLE_SITES: usize = 6;

/// Threshold below which a superoperator eigenvalue counts as zero.
const NULL_SPACE_TOL: f64 = 1e-8;

/// Column-major vectorization: `v[j*dim + i] = x[(i, j)]`.
pub fn vec_density(x: &CMat) -> CVec {
    let dim = x.nrows();
    CVec::from_shape_fn(dim * dim, |k| x[[k % dim, k / dim]])
}

/// Inverse of [`vec_density`].
pub fn unvec_density(v: &CVec) -> Result<CMat> {
    let len = v.len();
    let dim = (len as f64).sqrt().round() as usize;
    if dim * dim != len {
        return Err(Error::DimMismatch(dim * dim, len));
    }
    Ok(CMat::from_shape_fn((dim, dim), |(i, j)| v[j * dim + i]))
}

fn guard(m: &LindbladModel) -> Result<()> {
    if m.n_sites() > MAX_ORACLE_SITES {
        return Err(Error::SizeGuard {
            n_sites: m.n_sites(),
            limit: MAX_ORACLE_SITES,
        });
    }
    Ok(())
}

/// Dense superoperator matrix of the generator, dimension `4^n × 4^n`.
pub fn liouvillian_matrix(m: &LindbladModel) -> Result<CMat> {
    guard(m)?;
    let dim = 1usize << m.n_sites();
    let id = identity(dim);
    let h = m.hamiltonian_matrix();
    let mut sup = kron(&id, h) - kron(&h.t().to_owned(), &id);
    sup.mapv_inplace(|z| z * c(0.0, -1.0));
    for (f, &(_, rate)) in m.jump_matrices().iter().zip(m.jumps().iter()) {
        if rate == 0.0 {
            continue;
        }
        let fdf = dagger(f).dot(f);
        let jump = kron(&f.mapv(|z| z.conj()), f);
        let anti = kron(&id, &fdf) + kron(&fdf.t().to_owned(), &id);
        sup = sup + jump.mapv(|z| z * c(rate, 0.0)) - anti.mapv(|z| z * c(0.5 * rate, 0.0));
    }
    Ok(sup)
}

/// A steady state extracted from the superoperator spectrum.
#[derive(Debug, Clone)]
pub struct SteadyState {
    /// Hermitized, trace-normalized null vector of the generator.
    pub rho: DensityMatrix,
    /// True when more than one eigenvalue sits inside the null-space
    /// tolerance: the steady state is then not unique and `rho` is only one
    /// representative.
    pub degenerate: bool,
    /// Magnitude of the smallest nonzero eigenvalue (asymptotic decay rate).
    pub gap: f64,
}

/// Steady state of the generator via dense non-Hermitian diagonalization.
pub fn steady_state(m: &LindbladModel) -> Result<SteadyState> {
    guard(m)?;
    let sup = liouvillian_matrix(m)?;
    let (vals, vecs) = sup.eig().map_err(|e| Error::Linalg(e.to_string()))?;
    let scale = vals.iter().map(|z| z.norm()).fold(1.0f64, f64::max);
    let tol = NULL_SPACE_TOL * scale;
    let mut best = 0usize;
    let mut near_zero = 0usize;
    let mut gap = f64::INFINITY;
    for (k, z) in vals.iter().enumerate() {
        if z.norm() < vals[best].norm() {
            best = k;
        }
        if z.norm() <= tol {
            near_zero += 1;
        } else {
            gap = gap.min(z.norm());
        }
    }
    let col = vecs.column(best).to_owned();
    let raw = unvec_density(&col)?;
    let herm = (&raw + &dagger(&raw)).mapv(|z| z * c(0.5, 0.0));
    let tr: C64 = (0..herm.nrows()).map(|i| herm[[i, i]]).sum();
    if tr.norm() < 1e-12 {
        return Err(Error::Linalg(
            "steady-state candidate has vanishing trace; generator null space is traceless".into(),
        ));
    }
    let rho_mat = herm.mapv(|z| z / tr);
    Ok(SteadyState {
        rho: DensityMatrix::from_matrix(rho_mat)?,
        degenerate: near_zero > 1,
        gap,
    })
}

/// Fourth-order Runge–Kutta integration of `dρ/dt = Lρ`.
///
/// Returns `(time, state)` samples: the initial state, every
/// `record_every`-th step, and the final step. The state is re-hermitized
/// after every step so round-off cannot accumulate asymmetry.
pub fn evolve_rk4(
    m: &LindbladModel,
    rho0: &DensityMatrix,
    dt: f64,
    steps: usize,
    record_every: usize,
) -> Result<Vec<(f64, DensityMatrix)>> {
    guard(m)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::NonFinite("rk4 time step"));
    }
    let stride = record_every.max(1);
    let mut rho = rho0.mat().clone();
    let mut out = vec![(0.0, rho0.clone())];
    for step in 1..=steps {
        let k1 = m.apply_liouvillian(&rho);
        let k2 = m.apply_liouvillian(&(&rho + &k1.mapv(|z| z * c(0.5 * dt, 0.0))));
        let k3 = m.apply_liouvillian(&(&rho + &k2.mapv(|z| z * c(0.5 * dt, 0.0))));
        let k4 = m.apply_liouvillian(&(&rho + &k3.mapv(|z| z * c(dt, 0.0))));
        let incr = k1 + k2.mapv(|z| z * c(2.0, 0.0)) + k3.mapv(|z| z * c(2.0, 0.0)) + k4;
        rho = &rho + &incr.mapv(|z| z * c(dt / 6.0, 0.0));
        rho = (&rho + &dagger(&rho)).mapv(|z| z * c(0.5, 0.0));
        if step % stride == 0 || step == steps {
            let t = dt * step as f64;
            out.push((t, DensityMatrix::from_matrix(rho.clone())?));
        }
    }
    Ok(out)
}
