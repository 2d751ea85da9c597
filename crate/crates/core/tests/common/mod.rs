//! Dense reference implementations shared by the integration targets.

#![allow(dead_code)]

use iml::gpr::{diagonal_noise, se_kernel, KernelHyperparams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Posterior mean and latent variance by an LU solve of the full system.
pub fn dense_predict(x: &[f64], y: &[f64], h: &KernelHyperparams, at: f64) -> (f64, f64) {
    let n = x.len();
    let sn2 = diagonal_noise(h);
    let k = DMatrix::from_fn(n, n, |i, j| se_kernel(x[i], x[j], h) + if i == j { sn2 } else { 0.0 });
    let lu = k.lu();
    let ks = DVector::from_fn(n, |i, _| se_kernel(x[i], at, h));
    let alpha = lu.solve(&DVector::from_column_slice(y)).expect("oracle system is regular");
    let v = lu.solve(&ks).expect("oracle system is regular");
    (ks.dot(&alpha), h.signal_variance - ks.dot(&v))
}

/// Log marginal likelihood through a dense determinant and solve.
pub fn dense_lml(x: &[f64], y: &[f64], h: &KernelHyperparams) -> f64 {
    let n = x.len();
    let sn2 = diagonal_noise(h);
    let k = DMatrix::from_fn(n, n, |i, j| se_kernel(x[i], x[j], h) + if i == j { sn2 } else { 0.0 });
    let yv = DVector::from_column_slice(y);
    let alpha = k.clone().lu().solve(&yv).expect("oracle system is regular");
    -0.5 * yv.dot(&alpha) - 0.5 * k.determinant().ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// A random well-separated dataset with hyperparameters scaled to it.
pub struct RandomCase {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub h: KernelHyperparams,
    pub queries: Vec<f64>,
}

pub fn random_case(rng: &mut ChaCha8Rng) -> RandomCase {
    let n = rng.random_range(1..=20);
    let mut x: Vec<f64> = Vec::with_capacity(n);
    while x.len() < n {
        let c = rng.random_range(0.0..30.0);
        if x.iter().all(|v: &f64| (v - c).abs() > 0.05) {
            x.push(c);
        }
    }
    let y = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let sf2 = rng.random_range(0.1..10.0);
    let h = KernelHyperparams::new(
        sf2,
        rng.random_range(0.5..10.0),
        sf2 * 10f64.powf(rng.random_range(-4.0..-1.0)),
    )
    .unwrap();
    let queries = (0..5).map(|_| rng.random_range(-5.0..35.0)).collect();
    RandomCase { x, y, h, queries }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
