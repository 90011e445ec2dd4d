//! Climate paths under three scenarios and the compounded effect on GDP
//! per capita by 2050.

use panelclim::estimate::fit;
use panelclim::panel::{compile, CompileOptions, ModelSpec};
use panelclim::project::{extrapolate_climate, project_all, Anchoring};
use panelclim::synth::{generate, SynthConfig};
use panelclim::types::Scenario;

fn main() -> panelclim::Result<()> {
    let spec = ModelSpec::preset("m5")?;
    let data = generate(&SynthConfig { spec: spec.clone(), seed: 3, ..SynthConfig::default() })?;
    let panel = data.panel(&spec)?;
    let f = fit(&compile(&panel, &spec, &CompileOptions::default())?)?;

    println!("{:<9}{}", "province", Scenario::ALL.map(|s| format!("{:>10}", s.label())).concat());
    let mut by_scenario = Vec::new();
    for scenario in Scenario::ALL {
        let path = extrapolate_climate(&data.rcp, &data.inputs.anomalies, scenario, Anchoring::Endpoint, 2050)?;
        by_scenario.push(project_all(&f, &panel, &path, (1998, 2017), 2050)?);
    }
    for (i, p) in panel.provinces().iter().enumerate() {
        let cells: String =
            by_scenario.iter().map(|t| format!("{:>9.2}%", t[i].points.last().unwrap().pct_delta_gdp)).collect();
        println!("{:<9}{cells}", p.code());
    }
    Ok(())
}
