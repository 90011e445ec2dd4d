//! End to end: write a synthetic project, run every stage, then run again
//! and confirm nothing is recomputed.

use panelclim::pipeline::{run_all, synth_stage, Layout, RunConfig};
use panelclim::synth::SynthConfig;

fn main() -> panelclim::Result<()> {
    let root = std::env::temp_dir().join("panelclim_synthetic_pipeline");
    let _ = std::fs::remove_dir_all(&root);
    let out = synth_stage(&SynthConfig::default(), &root)?;
    let mut cfg = RunConfig::load(&out.config_path)?;
    cfg.bootstrap.replicates = 100;

    for pass in 1..=2 {
        let summary = run_all(&cfg, false)?;
        let ran: Vec<&str> = summary.stages.iter().filter(|(_, r)| *r).map(|(n, _)| n.as_str()).collect();
        println!("pass {pass}: {} stages recomputed {ran:?}", summary.recomputed());
    }
    let l = Layout::new(&cfg.output);
    println!("outputs under {}", cfg.output.display());
    for f in [l.infer.join("table.csv"), l.project.join("trajectories.csv"), l.bootstrap.join("quantiles.csv")] {
        println!("  {}", f.display());
    }
    Ok(())
}
