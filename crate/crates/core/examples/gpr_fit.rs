//! Fitting one frequency-response component with Gaussian process regression.
//!
//! Noisy samples of the real part of the benchmark plant are fitted with
//! optimized hyperparameters; the 95% band is compared with the truth.

use iml::gpr::{fit, FitOptions, GprDataset};
use iml::plant::{example_plant, RngStream};

fn main() -> iml::Result<()> {
    let tf = example_plant();
    let mut rng = RngStream::new(3);
    let omegas: Vec<f64> = (0..30).map(|i| 0.5 + i as f64).collect();
    let targets = omegas
        .iter()
        .map(|&w| Ok(tf.freq_response(w)?.re + 0.01 * rng.standard_normal()))
        .collect::<iml::Result<Vec<_>>>()?;
    let model = fit(&GprDataset::new(omegas, targets)?, &FitOptions::default())?;
    let h = model.hyperparams();
    println!(
        "signal variance {:.4e}, length scale {:.4} rad/s, noise variance {:.3e}, lml {:.3}",
        h.signal_variance,
        h.length_scale,
        h.noise_variance,
        model.log_marginal_likelihood()
    );

    let mut covered = 0;
    let probes = 60;
    for i in 0..probes {
        let w = 0.5 + 29.0 * i as f64 / (probes - 1) as f64;
        let p = model.predict(w);
        let truth = tf.freq_response(w)?.re;
        let half = 1.96 * p.variance.sqrt();
        if (truth - p.mean).abs() <= half {
            covered += 1;
        }
        if i % 10 == 0 {
            println!("omega {w:6.2}: truth {truth:+.4}, mean {:+.4} +- {half:.4}", p.mean);
        }
    }
    println!("truth inside the band at {covered}/{probes} probes");
    Ok(())
}
