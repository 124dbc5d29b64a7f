use nalgebra::{DMatrix, DVector};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::lmm::Dataset;

pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }
    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }
    pub fn uniform(&mut self) -> f64 {
        self.0.random()
    }
    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }
}

/// Relatedness-like PSD matrix `AAᵀ/m` with unit mean diagonal.
pub fn random_kinship(rng: &mut Rng, n: usize) -> DMatrix<f64> {
    let m = n.max(4) / 2;
    let a = DMatrix::from_fn(n, m, |_, _| rng.normal());
    let mut k = &a * a.transpose() / m as f64;
    crate::linalg::symmetrize(&mut k);
    k
}

pub fn random_dataset(rng: &mut Rng, n: usize, q: usize, p: usize, kinship: bool) -> Dataset {
    let x = DMatrix::from_fn(n, q, |_, j| if j == 0 { 1.0 } else { rng.normal() });
    let g = DMatrix::from_fn(n, p, |_, _| rng.normal());
    let y = DVector::from_fn(n, |_, _| rng.normal());
    let k = kinship.then(|| random_kinship(rng, n));
    Dataset::new(y, x, g, k).unwrap()
}

/// Intercept-only data drawn from the model with one random-normal effect column.
pub fn random_effect_dataset(rng: &mut Rng, n: usize, lambda: f64, tau: f64) -> Dataset {
    let k = random_kinship(rng, n);
    let eig = crate::linalg::psd_eigen(&k, 1e-8).unwrap();
    let z = DVector::from_fn(n, |_, _| rng.normal());
    let scaled = DVector::from_fn(n, |i, _| eig.eigenvalues[i].sqrt() * z[i]);
    let u = &eig.eigenvectors * scaled * (lambda / tau).sqrt();
    let y = DVector::from_fn(n, |i, _| 1.0 + u[i] + rng.normal() / tau.sqrt());
    let g = DMatrix::from_fn(n, 1, |_, _| rng.normal());
    Dataset::new(y, Dataset::intercept(n), g, Some(k)).unwrap()
}
