//! The data-based update without a learned model, for comparison.
//!
//! Each input is the previous one rescaled by `y_d / y_m`. Noise enters the
//! ratio directly, so bins where the output is small are amplified.

use std::path::Path;

use iml::experiment::{prepare, RunConfig};
use iml::ilc::run_baseline_modelless;
use iml::sig4;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/paper_sec5.json"))?;
    let (tf, prepared) = prepare(&cfg)?;
    let p = &prepared[0];
    let h = run_baseline_modelless(&tf, &p.y_d, &p.ilc, &p.noise, cfg.baseline_alpha, cfg.seed)?;
    for r in &h.records {
        let u_peak = r.u.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
        println!("k={} e_y={}% max|u|={}", r.iteration, sig4(r.e_y), sig4(u_peak));
    }
    Ok(())
}
