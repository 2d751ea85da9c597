//! Uncertainty-bounded iteration gains at a single frequency.

use iml::ilc::{contraction_factor, gain_upper_bound, select_gain, uncertainty_envelope};
use iml::Complex64;

fn main() -> iml::Result<()> {
    let (a_hat, b_hat) = (1.0, 0.0);
    println!("{:>8} {:>8} {:>10} {:>10} {:>10} {:>10}", "delta_a", "delta_b", "rho_star", "rho", "mag", "cos");
    for (da, db) in [(0.0, 0.0), (0.1, 0.0), (0.5, 0.0), (0.3, 0.3), (0.9, 0.5), (1.0, 0.0)] {
        let r = gain_upper_bound(a_hat, b_hat, da, db)?;
        let (mag, cos) = uncertainty_envelope(a_hat, b_hat, da, db)?;
        println!(
            "{da:>8.2} {db:>8.2} {r:>10.4} {:>10.4} {mag:>10.4} {cos:>10.4}",
            select_gain(r, 0.9)
        );
    }

    // Worst corner of the (0.5, 0.2) box: the selected gain still contracts.
    let (da, db) = (0.5, 0.2);
    let rho = select_gain(gain_upper_bound(a_hat, b_hat, da, db)?, 0.9);
    let mut worst = 0.0f64;
    for sa in [-1.0, 1.0] {
        for sb in [-1.0, 1.0] {
            let g = Complex64::new(a_hat + sa * da, b_hat + sb * db);
            worst = worst.max(contraction_factor(rho, g, Complex64::new(a_hat, b_hat))?);
        }
    }
    println!("rho = {rho:.4}, worst corner contraction |1 - rho g/g_hat| = {worst:.4}");
    Ok(())
}
