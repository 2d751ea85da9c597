//! Model data with and without persistency of excitation.
//!
//! Run with `cargo run --release --example pe_comparison [seed]`.

use std::path::Path;

use iml::experiment::{pe_comparison, prepare, RunConfig};
use iml::sig4;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/paper_sec5.json"))?;
    let (tf, prepared) = prepare(&cfg)?;
    let p = &prepared[0];
    let cmp = pe_comparison(&tf, &p.y_d, &p.ilc, &p.noise, seed)?;
    let r = cmp.report;
    println!("sigma = {}", sig4(p.sigma));
    println!("without excitation: e_a,max = {}, e_b,max = {}", sig4(r.e_a_max), sig4(r.e_b_max));
    println!("with excitation:    e_a,max = {}, e_b,max = {}", sig4(r.e_a_max_tilde), sig4(r.e_b_max_tilde));

    let worst = cmp
        .bins
        .iter()
        .filter(|b| b.e_a.is_finite())
        .max_by(|x, y| x.e_a.total_cmp(&y.e_a))
        .expect("at least one bin");
    println!(
        "worst plain bin at {:.3} rad/s: e_a {} drops to {} with excitation",
        worst.omega,
        sig4(worst.e_a),
        sig4(worst.e_a_tilde)
    );
    Ok(())
}
