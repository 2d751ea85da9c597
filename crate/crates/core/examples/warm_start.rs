//! Reusing a learned model for a new trajectory.
//!
//! The first trajectory is learned from scratch; its final model then
//! inverts the second, faster trajectory before any trial of it is run.

use std::path::Path;

use iml::experiment::{prepare, run_chain, RunConfig};
use iml::sig4;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/paper_sec5_new_traj.json"))?;
    let (tf, prepared) = prepare(&cfg)?;
    let histories = run_chain(&tf, &prepared, cfg.seed)?;
    for (j, h) in histories.iter().enumerate() {
        let p = &prepared[j];
        println!(
            "trajectory {} ({} Hz, {} harmonics):",
            j + 1,
            sig4(p.spec.main_frequency_hz),
            p.spec.num_harmonics
        );
        for r in &h.records {
            println!("  k={} e_y={}% noise={}%", r.iteration, sig4(r.e_y), sig4(r.noise_level));
        }
    }
    Ok(())
}
