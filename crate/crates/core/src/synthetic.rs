//! Random problem instances for property tests, benchmarks and the
//! multi-start landscape experiments.
//!
//! [`random_diagnostics`] draws a covariance `C`, a mean `m` and a Fisher
//! matrix `H = C⁻¹ + P` with `P ⪰ 0`, so the result satisfies the
//! Cramér–Rao ordering `H ⪰ C⁻¹` that every genuine target measure obeys.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diagnostics::{diagnostics_from_gaussian, DiagnosticSet};
use crate::gaussian_oracle::GaussianMeasure;
use crate::linalg::SymMatrix;

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

/// `G Gᵀ / d + floor·I` with `G` standard Gaussian.
pub fn random_spd<R: Rng + ?Sized>(d: usize, floor: f64, rng: &mut R) -> SymMatrix {
    let g = gaussian_matrix(d, d, rng);
    SymMatrix::new(&g * g.transpose() / d as f64)
        .expect("finite")
        .shift(floor)
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    crate::linalg::Frame::random(d, d, rng).into_matrix()
}

pub fn random_gaussian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> GaussianMeasure {
    let cov = random_spd(d, 0.2, rng);
    let mean = gaussian_vector(d, rng);
    GaussianMeasure::new(mean, cov).expect("covariance is pd")
}

/// A non-Gaussian-looking diagnostic set with `H = C⁻¹ + P`.
pub fn random_diagnostics<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DiagnosticSet {
    let cov = random_spd(d, 0.2, rng);
    let mean = gaussian_vector(d, rng) * rng.random_range(0.0..1.5);
    let k = rng.random_range(0..=d);
    let p = gaussian_matrix(d, k, rng) * rng.random_range(0.0..2.0);
    let fisher = SymMatrix::new(cov.inverse().expect("pd").matrix() + &p * p.transpose()).expect("finite");
    let second = cov.rank_one_update(&mean, 1.0);
    DiagnosticSet::from_fisher(fisher, second, mean).expect("consistent dimensions")
}

/// Diagnostics of a random Gaussian target.
pub fn random_gaussian_diagnostics<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DiagnosticSet {
    diagnostics_from_gaussian(&random_gaussian(d, rng)).expect("pd covariance")
}
