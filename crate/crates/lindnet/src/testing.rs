//! Seeded random-object helpers shared by unit, integration, and property
//! tests. Kept in the library proper so integration tests and the fuzz
//! harness can reuse them.

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{c, dagger, CMat, CVec};

/// Deterministic generator for a fixed seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix with independent standard-normal-ish entries (uniform sum proxy).
fn random_complex(rngen: &mut impl Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_shape_fn((rows, cols), |_| {
        c(rngen.random_range(-1.0..1.0), rngen.random_range(-1.0..1.0))
    })
}

/// Random Hermitian matrix of the given dimension.
pub fn random_hermitian(rngen: &mut impl Rng, dim: usize) -> CMat {
    let a = random_complex(rngen, dim, dim);
    let mut h = &a + &dagger(&a);
    h.mapv_inplace(|z| z * 0.5);
    h
}

/// Random density matrix: positive semidefinite with unit trace.
pub fn random_density(rngen: &mut impl Rng, dim: usize) -> CMat {
    let a = random_complex(rngen, dim, dim);
    let psd = a.dot(&dagger(&a));
    let tr: crate::linalg::C64 = (0..dim).map(|i| psd[[i, i]]).sum();
    psd.mapv(|z| z / tr)
}

/// Random unitary via Gram–Schmidt on a random complex matrix.
pub fn random_unitary(rngen: &mut impl Rng, dim: usize) -> CMat {
    let a = random_complex(rngen, dim, dim);
    let mut cols: Vec<CVec> = (0..dim).map(|j| a.column(j).to_owned()).collect();
    for j in 0..dim {
        for k in 0..j {
            let proj: crate::linalg::C64 =
                cols[k].iter().zip(cols[j].iter()).map(|(x, y)| x.conj() * y).sum();
            let prev = cols[k].clone();
            cols[j].zip_mut_with(&prev, |y, x| *y -= proj * x);
        }
        let norm: f64 = cols[j].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        cols[j].mapv_inplace(|z| z / norm);
    }
    let mut u = CMat::zeros((dim, dim));
    for (j, col) in cols.iter().enumerate() {
        for i in 0..dim {
            u[[i, j]] = col[i];
        }
    }
    u
}

/// Random normalized state vector.
pub fn random_state_vector(rngen: &mut impl Rng, dim: usize) -> CVec {
    let mut v = Array1::from_shape_fn(dim, |_| {
        c(rngen.random_range(-1.0..1.0), rngen.random_range(-1.0..1.0))
    });
    let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.mapv_inplace(|z| z / norm);
    v
}
