//! Province block bootstrap of a projected trajectory. Set
//! PANELCLIM_THREADS to change the worker count; results do not depend on it.

use panelclim::boot::{block_bootstrap, BootstrapSettings};
use panelclim::panel::ModelSpec;
use panelclim::project::{extrapolate_climate, Anchoring};
use panelclim::synth::{generate, SynthConfig};
use panelclim::types::Scenario;

fn main() -> panelclim::Result<()> {
    let spec = ModelSpec::preset("m5")?;
    let data = generate(&SynthConfig { spec: spec.clone(), seed: 5, ..SynthConfig::default() })?;
    let panel = data.panel(&spec)?;
    let path = extrapolate_climate(&data.rcp, &data.inputs.anomalies, Scenario::Rcp45, Anchoring::Endpoint, 2050)?;

    let threads = std::env::var("PANELCLIM_THREADS").ok().and_then(|s| s.parse().ok()).unwrap_or(2);
    let settings = BootstrapSettings { replicates: 200, threads, ..BootstrapSettings::default() };
    let run = block_bootstrap(&panel, &spec, &path, &settings)?;
    println!("{} replicates, {} failed", run.replicates.len(), run.failures);
    println!("{:<9} {:>9} {:>9} {:>9}", "province", "point", "q2.5", "q97.5");
    for q in run.quantiles.iter().filter(|q| q.year == 2050) {
        println!("{:<9} {:>8.2}% {:>8.2}% {:>8.2}%", q.province.code(), q.point, q.q025, q.q975);
    }
    Ok(())
}
