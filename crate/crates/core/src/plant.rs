//! Ground-truth LTI plant used as the simulation oracle.
//!
//! Simulation is exact frequency-domain multiplication on the record's
//! grid (periodic convolution), with measurement noise injected per bin.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ImlError, Result};
use crate::spectrum::{ComplexSpectrum, FrequencyGrid};

/// Magnitude below which a transfer function value is treated as zero.
pub const RESPONSE_FLOOR: f64 = 1e-12;

/// Rational transfer function with real coefficients in ascending powers of `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    numerator: Vec<f64>,
    denominator: Vec<f64>,
}

fn degree(coeffs: &[f64]) -> Option<usize> {
    coeffs.iter().rposition(|c| *c != 0.0)
}

fn horner(coeffs: &[f64], s: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, c| acc * s + c)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

impl TransferFunction {
    pub fn new(numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        if numerator.iter().chain(&denominator).any(|c| !c.is_finite()) {
            return Err(ImlError::InvalidArgument(
                "transfer function coefficients must be finite".into(),
            ));
        }
        let den_deg = degree(&denominator).ok_or_else(|| {
            ImlError::InvalidArgument("denominator is identically zero".into())
        })?;
        if let Some(num_deg) = degree(&numerator) {
            if num_deg > den_deg {
                return Err(ImlError::InvalidArgument(format!(
                    "improper transfer function: numerator degree {num_deg} > denominator degree {den_deg}"
                )));
            }
        }
        Ok(Self {
            numerator,
            denominator,
        })
    }

    /// Static gain `c`.
    pub fn constant(c: f64) -> Result<Self> {
        Self::new(vec![c], vec![1.0])
    }

    pub fn numerator(&self) -> &[f64] {
        &self.numerator
    }

    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }

    /// Pole count minus zero count (the numerator's trailing zeros do not count).
    pub fn relative_degree(&self) -> usize {
        let den = degree(&self.denominator).unwrap_or(0);
        let num = degree(&self.numerator).unwrap_or(0);
        den - num
    }

    /// Value at an arbitrary complex `s`.
    pub fn eval(&self, s: Complex64) -> Complex64 {
        horner(&self.numerator, s) / horner(&self.denominator, s)
    }

    /// `g(j omega)`.
    pub fn freq_response(&self, omega: f64) -> Result<Complex64> {
        if !(omega >= 0.0) {
            return Err(ImlError::InvalidArgument(format!(
                "frequency must be non-negative, got {omega}"
            )));
        }
        let s = Complex64::new(0.0, omega);
        let den = horner(&self.denominator, s);
        if den.norm() < RESPONSE_FLOOR {
            return Err(ImlError::SingularResponse {
                omega,
                magnitude: den.norm(),
            });
        }
        Ok(horner(&self.numerator, s) / den)
    }

    /// Frequency response evaluated on every bin of `grid`.
    pub fn response_on(&self, grid: &FrequencyGrid) -> Result<ComplexSpectrum> {
        let values = (0..grid.num_bins())
            .map(|i| self.freq_response(grid.frequency(i)))
            .collect::<Result<Vec<_>>>()?;
        let mut spec = ComplexSpectrum::from_values(*grid, values)?;
        spec.force_real_endpoints();
        Ok(spec)
    }

    /// Routh-Hurwitz test: true when every pole lies in the open left half plane.
    pub fn is_stable(&self) -> bool {
        let Some(deg) = degree(&self.denominator) else {
            return false;
        };
        // Descending coefficients normalized to a positive leading term.
        let lead = self.denominator[deg];
        let desc: Vec<f64> = self.denominator[..=deg]
            .iter()
            .rev()
            .map(|c| c / lead)
            .collect();
        if desc.iter().any(|c| *c <= 0.0) {
            return false;
        }
        let mut prev: Vec<f64> = desc.iter().step_by(2).copied().collect();
        let mut curr: Vec<f64> = desc.iter().skip(1).step_by(2).copied().collect();
        for _ in 0..deg {
            let Some(&pivot) = curr.first() else {
                break;
            };
            if pivot <= 0.0 {
                return false;
            }
            let next: Vec<f64> = (0..prev.len().saturating_sub(1))
                .map(|i| {
                    let p = prev.get(i + 1).copied().unwrap_or(0.0);
                    let c = curr.get(i + 1).copied().unwrap_or(0.0);
                    p - prev[0] * c / pivot
                })
                .collect();
            prev = curr;
            curr = next;
        }
        true
    }
}

/// Stable non-minimum-phase benchmark plant with two damped pole pairs at
/// 2*pi and 6*pi rad/s, zeros at +/-4*pi rad/s, and unit DC gain.
pub fn example_plant() -> TransferFunction {
    let (wp1, wp2, wz) = (2.0 * PI, 6.0 * PI, 4.0 * PI);
    let (z1, z2) = (FRAC_1_SQRT_2, FRAC_1_SQRT_2);
    let den = poly_mul(
        &[wp1 * wp1, 2.0 * z1 * wp1, 1.0],
        &[wp2 * wp2, 2.0 * z2 * wp2, 1.0],
    );
    let dc = wp1 * wp1 * (wp2 * wp2);
    // -(dc / wz^2) (s - wz)(s + wz) = dc - (dc / wz^2) s^2
    let num = vec![dc, 0.0, -dc / (wz * wz)];
    TransferFunction::new(num, den).expect("benchmark plant is well formed")
}

/// Per-bin Gaussian measurement noise on the real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_a: f64,
    pub sigma_b: f64,
}

impl NoiseModel {
    pub fn new(sigma_a: f64, sigma_b: f64) -> Result<Self> {
        let ok = |s: f64| s.is_finite() && s >= 0.0;
        if !(ok(sigma_a) && ok(sigma_b)) {
            return Err(ImlError::InvalidArgument(format!(
                "noise standard deviations must be finite and non-negative, got ({sigma_a}, {sigma_b})"
            )));
        }
        Ok(Self { sigma_a, sigma_b })
    }

    pub fn none() -> Self {
        Self {
            sigma_a: 0.0,
            sigma_b: 0.0,
        }
    }

    pub fn uniform(sigma: f64) -> Result<Self> {
        Self::new(sigma, sigma)
    }

    /// Equal real/imaginary deviation `fraction * max_{omega <= omega_c} |y_d(omega)|`.
    pub fn relative_to(y_d: &ComplexSpectrum, omega_c: f64, fraction: f64) -> Result<Self> {
        Self::uniform(fraction * y_d.max_abs_up_to(omega_c))
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_a == 0.0 && self.sigma_b == 0.0
    }
}

/// Seeded, splittable random stream.
///
/// Each `(seed, stream)` pair selects an independent ChaCha8 sequence; the
/// same pair always reproduces the same draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

/// One noise realization on a grid, DC and Nyquist bins forced real.
pub fn draw_noise(grid: &FrequencyGrid, noise: &NoiseModel, rng: &mut RngStream) -> ComplexSpectrum {
    let mut spec = ComplexSpectrum::from_fn(*grid, |_, _| {
        let re = noise.sigma_a * rng.standard_normal();
        let im = noise.sigma_b * rng.standard_normal();
        Complex64::new(re, im)
    });
    spec.force_real_endpoints();
    spec
}

/// Result of one simulated trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    /// Noise-free plant output `g u`.
    pub output: ComplexSpectrum,
    pub noise: ComplexSpectrum,
    /// `g u + n`, the signal the learning loop observes.
    pub measured: ComplexSpectrum,
}

/// Applies a precomputed frequency response to `u` and adds `noise`.
pub fn measure(
    response: &ComplexSpectrum,
    u: &ComplexSpectrum,
    noise: ComplexSpectrum,
) -> Result<Measurement> {
    let output = response.zip_with(u, |g, x| g * x)?;
    let measured = output.zip_with(&noise, |y, n| y + n)?;
    Ok(Measurement {
        output,
        noise,
        measured,
    })
}

/// Simulates `y_m = g u + n` and keeps the noise-free output alongside.
pub fn simulate_trial(
    tf: &TransferFunction,
    u: &ComplexSpectrum,
    noise: &NoiseModel,
    rng: &mut RngStream,
) -> Result<Measurement> {
    let response = tf.response_on(u.grid())?;
    let n = draw_noise(u.grid(), noise, rng);
    measure(&response, u, n)
}

/// Measured output `g(j omega) u(omega) + n_y(omega)`.
pub fn simulate(
    tf: &TransferFunction,
    u: &ComplexSpectrum,
    noise: &NoiseModel,
    rng: &mut RngStream,
) -> Result<ComplexSpectrum> {
    Ok(simulate_trial(tf, u, noise, rng)?.measured)
}

/// Exact inverse feedforward `g^-1 y_d` up to `omega_c`, zero above.
pub fn exact_inverse_input(
    tf: &TransferFunction,
    y_d: &ComplexSpectrum,
    omega_c: f64,
) -> Result<ComplexSpectrum> {
    let grid = *y_d.grid();
    let active = grid.bins_up_to(omega_c);
    let mut u = ComplexSpectrum::zeros(grid);
    for i in 0..active {
        let omega = grid.frequency(i);
        let g = tf.freq_response(omega)?;
        if g.norm() <= RESPONSE_FLOOR {
            return Err(ImlError::SingularResponse {
                omega,
                magnitude: g.norm(),
            });
        }
        u.values_mut()[i] = y_d.values()[i] / g;
    }
    u.force_real_endpoints();
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::make_grid;

    /// Direct evaluation of the factored form, independent of the
    /// expanded coefficients.
    fn factored_example(omega: f64) -> Complex64 {
        let s = Complex64::new(0.0, omega);
        let (wp1, wp2, wz) = (2.0 * PI, 6.0 * PI, 4.0 * PI);
        let z = FRAC_1_SQRT_2;
        let k = -(wp1 * wp1 * wp2 * wp2) / (wz * wz);
        k * (s - wz) * (s + wz)
            / ((s * s + 2.0 * z * wp1 * s + wp1 * wp1) * (s * s + 2.0 * z * wp2 * s + wp2 * wp2))
    }

    #[test]
    fn example_plant_properties() {
        let g = example_plant();
        assert_eq!(g.freq_response(0.0).unwrap(), Complex64::new(1.0, 0.0));
        assert_eq!(g.relative_degree(), 2);
        assert!(g.freq_response(1e6).unwrap().norm() < 1e-6);
        assert!(g.is_stable());
        for omega in [4.0 * PI, 1.0, 7.3, 31.4] {
            let d = g.freq_response(omega).unwrap() - factored_example(omega);
            assert!(d.norm() < 1e-12, "omega={omega}: {d}");
        }
    }

    #[test]
    fn first_order_and_constant() {
        let g = TransferFunction::new(vec![1.0], vec![1.0, 1.0]).unwrap();
        let v = g.freq_response(1.0).unwrap();
        assert!((v - Complex64::new(0.5, -0.5)).norm() < 1e-15);
        let c = TransferFunction::constant(3.5).unwrap();
        assert_eq!(c.freq_response(42.0).unwrap(), Complex64::new(3.5, 0.0));
    }

    #[test]
    fn invalid_and_singular() {
        assert!(TransferFunction::new(vec![1.0], vec![0.0, 0.0]).is_err());
        assert!(TransferFunction::new(vec![0.0, 0.0, 1.0], vec![1.0, 1.0]).is_err());
        // 1 / (s^2 + 1) has a pole at j.
        let g = TransferFunction::new(vec![1.0], vec![1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            g.freq_response(1.0),
            Err(ImlError::SingularResponse { .. })
        ));
        assert!(!g.is_stable());
        assert!(g.freq_response(-1.0).is_err());
    }

    #[test]
    fn routh_hurwitz() {
        let stable = TransferFunction::new(vec![1.0], vec![6.0, 11.0, 6.0, 1.0]).unwrap();
        assert!(stable.is_stable());
        // (s - 1)(s + 2)
        let unstable = TransferFunction::new(vec![1.0], vec![-2.0, 1.0, 1.0]).unwrap();
        assert!(!unstable.is_stable());
        // s^3 + s^2 + 2 s + 8 has a right-half-plane pair.
        let unstable = TransferFunction::new(vec![1.0], vec![8.0, 2.0, 1.0, 1.0]).unwrap();
        assert!(!unstable.is_stable());
    }

    #[test]
    fn inverse_of_static_gain() {
        let grid = make_grid(0.1, 1.0).unwrap();
        let y = ComplexSpectrum::from_fn(grid, |i, _| Complex64::new(i as f64, if i == 0 || i == 5 { 0.0 } else { 1.0 }));
        let g = TransferFunction::constant(2.0).unwrap();
        let u = exact_inverse_input(&g, &y, grid.frequency(3)).unwrap();
        for i in 0..grid.num_bins() {
            let expect = if i <= 3 { y.values()[i] / 2.0 } else { Complex64::new(0.0, 0.0) };
            assert_eq!(u.values()[i], expect);
        }
        let zero = exact_inverse_input(&g, &ComplexSpectrum::zeros(grid), 100.0).unwrap();
        assert!(zero.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn inverse_rejects_vanishing_plant() {
        let grid = make_grid(0.1, 1.0).unwrap();
        let g = TransferFunction::new(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let y = ComplexSpectrum::zeros(grid);
        assert!(matches!(
            exact_inverse_input(&g, &y, 10.0),
            Err(ImlError::SingularResponse { .. })
        ));
    }

    #[test]
    fn noise_statistics() {
        let grid = make_grid(0.001, 4.0).unwrap();
        let sigma = 0.3;
        let mut rng = RngStream::new(11);
        let y = simulate(
            &example_plant(),
            &ComplexSpectrum::zeros(grid),
            &NoiseModel::uniform(sigma).unwrap(),
            &mut rng,
        )
        .unwrap();
        let re: Vec<f64> = y.values().iter().map(|v| v.re).collect();
        let mean = re.iter().sum::<f64>() / re.len() as f64;
        let var = re.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (re.len() - 1) as f64;
        assert!(re.len() >= 1000);
        assert!((var.sqrt() - sigma).abs() < 0.1 * sigma);
        assert_eq!(y.values()[0].im, 0.0);
        assert_eq!(y.values()[y.len() - 1].im, 0.0);
    }

    #[test]
    fn noiseless_zero_input() {
        let grid = make_grid(0.1, 1.0).unwrap();
        let y = simulate(
            &example_plant(),
            &ComplexSpectrum::zeros(grid),
            &NoiseModel::none(),
            &mut RngStream::new(0),
        )
        .unwrap();
        assert!(y.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngStream::with_stream(5, 1);
        let mut b = RngStream::with_stream(5, 1);
        let mut c = RngStream::with_stream(5, 2);
        let xa: Vec<f64> = (0..8).map(|_| a.standard_normal()).collect();
        let xb: Vec<f64> = (0..8).map(|_| b.standard_normal()).collect();
        let xc: Vec<f64> = (0..8).map(|_| c.standard_normal()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        assert!((0..100).map(|_| a.uniform()).all(|u| (0.0..1.0).contains(&u)));
    }

    #[test]
    fn noise_model_validation() {
        assert!(NoiseModel::new(-1.0, 0.0).is_err());
        assert!(NoiseModel::new(f64::NAN, 0.0).is_err());
        assert!(NoiseModel::none().is_zero());
    }
}
