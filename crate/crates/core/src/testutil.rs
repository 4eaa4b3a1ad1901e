//! Random test fixtures shared by the unit tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng))
}

pub fn random_orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    random_matrix(d, d, seed).qr().q()
}

pub fn random_symmetric(d: usize, seed: u64) -> DMatrix<f64> {
    let m = random_matrix(d, d, seed);
    (&m + m.transpose()) * 0.5
}

/// SPD matrix with eigenvalues log-spaced in `[1, kappa]`.
pub fn random_spd(d: usize, kappa: f64, seed: u64) -> DMatrix<f64> {
    let q = random_orthogonal(d, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let diag = DVector::from_fn(d, |i, _| match i {
        0 => 1.0,
        1 => kappa,
        _ => kappa.powf(rng.random::<f64>()),
    });
    let m = &q * DMatrix::from_diagonal(&diag) * q.transpose();
    (&m + m.transpose()) * 0.5
}
