//! The full learning loop on the benchmark problem.

use std::path::Path;

use iml::experiment::{prepare, run_chain, RunConfig};
use iml::sig4;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/paper_sec5.json"))?;
    let (tf, prepared) = prepare(&cfg)?;
    let history = run_chain(&tf, &prepared, seed)?.remove(0);

    println!("{:>3} {:>10} {:>10} {:>10} {:>8} {:>10}", "k", "e_y %", "e_g %", "noise %", "max rho", "data bins");
    for r in &history.records {
        let bins = r.model.as_ref().map_or(0, |m| m.points().iter().filter(|p| p.n_samples > 0).count());
        println!(
            "{:>3} {:>10} {:>10} {:>10} {:>8.3} {:>10}",
            r.iteration,
            sig4(r.e_y),
            r.e_g.map(sig4).unwrap_or_default(),
            sig4(r.noise_level),
            r.max_rho(),
            bins
        );
    }
    if let Some(fm) = &history.final_model {
        let widest = fm.points().iter().map(|p| p.delta_a.max(p.delta_b)).fold(0.0, f64::max);
        println!("final model: {} bins, widest bound {}", fm.points().len(), sig4(widest));
    }
    Ok(())
}
