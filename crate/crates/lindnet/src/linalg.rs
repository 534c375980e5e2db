//! Dense complex linear algebra on multi-qubit registers.
//!
//! Conventions used throughout the crate:
//!
//! - Qubit 0 is the **most significant bit** of a basis index: on `n` qubits,
//!   basis index `i` assigns qubit `q` the bit `(i >> (n - 1 - q)) & 1`.
//! - [`kron`] places the left factor on the high-order bits, so
//!   `kron(a, b)` acts on a register whose leading qubits belong to `a`.
//! - The Hilbert–Schmidt inner product is `⟨A, B⟩ = Tr(A† B)`.

use ndarray::{Array1, Array2};
use num_complex::Complex;

use crate::error::{Error, Result};

/// Double-precision complex scalar.
pub type C64 = Complex<f64>;
/// Dense complex matrix.
pub type CMat = Array2<C64>;
/// Dense complex vector.
pub type CVec = Array1<C64>;

/// Shorthand constructor for a complex scalar.
#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `dim x dim` identity matrix.
pub fn identity(dim: usize) -> CMat {
    CMat::eye(dim)
}

/// Conjugate transpose.
pub fn dagger(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

/// Number of qubits for a dimension that must be a power of two.
pub fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(dim));
    }
    Ok(dim.trailing_zeros() as usize)
}

/// Bit of qubit `q` inside basis index `i` on an `n`-qubit register.
#[inline]
pub fn qubit_bit(i: usize, n: usize, q: usize) -> usize {
    (i >> (n - 1 - q)) & 1
}

/// Kronecker product; the left factor owns the high-order bits.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = CMat::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == c(0.0, 0.0) {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Hilbert–Schmidt inner product `Tr(a† b) = Σ conj(a_ij) b_ij`.
pub fn hs_inner(a: &CMat, b: &CMat) -> C64 {
    debug_assert_eq!(a.dim(), b.dim());
    let mut acc = c(0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x.conj() * y;
    }
    acc
}

/// Frobenius (Hilbert–Schmidt) norm.
pub fn fro_norm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest entry magnitude.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entrywise difference between two matrices.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

fn check_qubits(n: usize, qubits: &[usize]) -> Result<()> {
    for (k, &q) in qubits.iter().enumerate() {
        if q >= n {
            return Err(Error::QubitOutOfRange { index: q, n_qubits: n });
        }
        if qubits[..k].contains(&q) {
            return Err(Error::DuplicateQubit(q));
        }
    }
    Ok(())
}

/// Trace out the qubits listed in `traced` from an `n`-qubit operator,
/// keeping the remaining qubits in their original relative order.
pub fn partial_trace(rho: &CMat, n: usize, traced: &[usize]) -> Result<CMat> {
    let dim = 1usize << n;
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::DimMismatch(rho.nrows(), dim));
    }
    check_qubits(n, traced)?;
    let mut traced_sorted = traced.to_vec();
    traced_sorted.sort_unstable();
    let kept: Vec<usize> = (0..n).filter(|q| !traced_sorted.contains(q)).collect();
    let (nk, nt) = (kept.len(), traced_sorted.len());

    // Precompute bit-scatter tables: compact kept/traced indices -> full index.
    let kept_expand: Vec<usize> = (0..1usize << nk)
        .map(|a| {
            let mut idx = 0;
            for (m, &q) in kept.iter().enumerate() {
                idx |= ((a >> (nk - 1 - m)) & 1) << (n - 1 - q);
            }
            idx
        })
        .collect();
    let traced_expand: Vec<usize> = (0..1usize << nt)
        .map(|t| {
            let mut idx = 0;
            for (m, &q) in traced_sorted.iter().enumerate() {
                idx |= ((t >> (nt - 1 - m)) & 1) << (n - 1 - q);
            }
            idx
        })
        .collect();

    let mut out = CMat::zeros((1 << nk, 1 << nk));
    for a in 0..1usize << nk {
        for b in 0..1usize << nk {
            let mut acc = c(0.0, 0.0);
            for &t in &traced_expand {
                acc += rho[[kept_expand[a] | t, kept_expand[b] | t]];
            }
            out[[a, b]] = acc;
        }
    }
    Ok(out)
}

/// Embed a `2^k x 2^k` unitary acting on the listed qubits (in the given
/// order, `qubits[0]` owning the gate's most significant bit) into the full
/// `2^n`-dimensional register.
pub fn embed_unitary(n: usize, qubits: &[usize], u: &CMat) -> Result<CMat> {
    let k = qubits.len();
    check_qubits(n, qubits)?;
    if u.nrows() != 1 << k || u.ncols() != 1 << k {
        return Err(Error::DimMismatch(u.nrows(), 1 << k));
    }
    let offsets = gate_offsets(n, qubits);
    let rest_bases = rest_bases(n, qubits);
    let mut out = CMat::zeros((1 << n, 1 << n));
    for &base_r in &rest_bases {
        for &base_c in &rest_bases {
            if base_r == base_c {
                for gr in 0..1usize << k {
                    for gc in 0..1usize << k {
                        out[[base_r | offsets[gr], base_c | offsets[gc]]] = u[[gr, gc]];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Offsets of the gate-qubit bit patterns inside a full register index.
fn gate_offsets(n: usize, qubits: &[usize]) -> Vec<usize> {
    let k = qubits.len();
    (0..1usize << k)
        .map(|g| {
            let mut off = 0;
            for (m, &q) in qubits.iter().enumerate() {
                off |= ((g >> (k - 1 - m)) & 1) << (n - 1 - q);
            }
            off
        })
        .collect()
}

/// All register indices whose gate-qubit bits are zero.
fn rest_bases(n: usize, qubits: &[usize]) -> Vec<usize> {
    let k = qubits.len();
    let mut positions: Vec<usize> = qubits.iter().map(|&q| n - 1 - q).collect();
    positions.sort_unstable();
    (0..1usize << (n - k))
        .map(|r| {
            let mut idx = r;
            // Insert zero bits at each gate position, lowest position first.
            for &p in &positions {
                let high = (idx >> p) << (p + 1);
                let low = idx & ((1 << p) - 1);
                idx = high | low;
            }
            idx
        })
        .collect()
}

/// Apply a `2^k x 2^k` unitary to the listed qubits of a state vector,
/// in place. `qubits[0]` owns the gate's most significant bit.
pub fn apply_gate_vec(v: &mut [C64], n: usize, qubits: &[usize], u: &CMat) {
    let k = qubits.len();
    debug_assert_eq!(v.len(), 1 << n);
    debug_assert_eq!(u.nrows(), 1 << k);
    let offsets = gate_offsets(n, qubits);
    let bases = rest_bases(n, qubits);
    let gd = 1usize << k;
    let mut amps = vec![c(0.0, 0.0); gd];
    for &base in &bases {
        for g in 0..gd {
            amps[g] = v[base | offsets[g]];
        }
        for gr in 0..gd {
            let mut acc = c(0.0, 0.0);
            for gc in 0..gd {
                acc += u[[gr, gc]] * amps[gc];
            }
            v[base | offsets[gr]] = acc;
        }
    }
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching unitary of column
/// eigenvectors, so `a = V diag(w) V†`. Deterministic: no BLAS involved, so
/// results are bit-stable across runs on the same machine.
pub fn eigh(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut m = a.clone();
    let mut v = identity(n);
    if n > 1 {
        let scale = fro_norm(&m).max(f64::MIN_POSITIVE);
        let tol = 1e-15 * scale;
        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..n - 1 {
                for q in p + 1..n {
                    off = off.max(m[[p, q]].norm());
                }
            }
            if off <= tol {
                break;
            }
            for p in 0..n - 1 {
                for q in p + 1..n {
                    jacobi_rotate(&mut m, &mut v, p, q);
                }
            }
        }
    }
    // Sort ascending by eigenvalue, carrying eigenvector columns along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].re.partial_cmp(&m[[j, j]].re).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| m[[i, i]].re).collect();
    let mut vecs = CMat::zeros((n, n));
    for (col, &i) in order.iter().enumerate() {
        for row in 0..n {
            vecs[[row, col]] = v[[row, i]];
        }
    }
    (vals, vecs)
}

/// One Jacobi rotation zeroing the (p, q) entry of a Hermitian matrix.
fn jacobi_rotate(m: &mut CMat, v: &mut CMat, p: usize, q: usize) {
    let apq = m[[p, q]];
    let norm = apq.norm();
    if norm < 1e-300 {
        return;
    }
    let u = apq / norm; // phase of the off-diagonal entry
    let app = m[[p, p]].re;
    let aqq = m[[q, q]].re;
    let theta = (aqq - app) / (2.0 * norm);
    let t = if theta >= 0.0 {
        1.0 / (theta + (1.0 + theta * theta).sqrt())
    } else {
        -1.0 / (-theta + (1.0 + theta * theta).sqrt())
    };
    let cth = 1.0 / (1.0 + t * t).sqrt();
    let sth = t * cth;
    let n = m.nrows();
    // Column update: M <- M J with J[p,p]=c, J[q,p]=-s*conj(u), J[p,q]=s, J[q,q]=c*conj(u).
    for i in 0..n {
        let mip = m[[i, p]];
        let miq = m[[i, q]];
        m[[i, p]] = mip * cth - miq * u.conj() * sth;
        m[[i, q]] = mip * sth + miq * u.conj() * cth;
    }
    // Row update: M <- J† M.
    for j in 0..n {
        let mpj = m[[p, j]];
        let mqj = m[[q, j]];
        m[[p, j]] = mpj * cth - mqj * u * sth;
        m[[q, j]] = mpj * sth + mqj * u * cth;
    }
    // Clean the target entries: they are zero in exact arithmetic.
    m[[p, q]] = c(0.0, 0.0);
    m[[q, p]] = c(0.0, 0.0);
    m[[p, p]] = c(m[[p, p]].re, 0.0);
    m[[q, q]] = c(m[[q, q]].re, 0.0);
    // Accumulate eigenvectors: V <- V J.
    for i in 0..v.nrows() {
        let vip = v[[i, p]];
        let viq = v[[i, q]];
        v[[i, p]] = vip * cth - viq * u.conj() * sth;
        v[[i, q]] = vip * sth + viq * u.conj() * cth;
    }
}
