//! Frequency-domain iterative machine learning (IML) control.
//!
//! The crate learns the frequency response of a stable LTI plant with
//! Gaussian process regression while it iterates a model-inversion
//! feedforward input towards exact output tracking. Iteration gains are
//! bounded by the regression's confidence intervals, and the input is
//! augmented with random-phase excitation where it would otherwise be too
//! small to yield useful identification data.
//!
//! Module map:
//!
//! - [`spectrum`]: grids, FFT bridge, desired-trajectory synthesis.
//! - [`plant`]: ground-truth transfer functions, exact inversion, noisy
//!   frequency-domain simulation.
//! - [`gpr`]: squared-exponential Gaussian process regression.
//! - [`model`]: model-data harvest, per-frequency averaging, split
//!   real/imaginary fits with uncertainty bounds.
//! - [`ilc`]: gain bounds, excitation, input updates and the iteration
//!   driver.
//! - [`experiment`]: configuration, study modes and artifact output used by
//!   the `iml` binary.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod error;
pub mod experiment;
pub mod gpr;
pub mod ilc;
pub mod model;
pub mod plant;
pub mod spectrum;

pub use error::{ImlError, Result};
pub use num_complex::Complex64;

/// Formats a float for CSV output: plain decimal in the usual range,
/// exponent notation otherwise. Both forms round-trip exactly.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else if !x.is_finite() || (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Formats `x` with four significant digits.
pub fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..4).contains(&mag) {
        let decimals = (3 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.3e}")
    }
}
