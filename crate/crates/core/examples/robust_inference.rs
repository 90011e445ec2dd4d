//! CR2 standard errors, Satterthwaite degrees of freedom and average
//! marginal effects for a mixed model with random year intercepts.

use panelclim::estimate::fit;
use panelclim::infer::{all_margins, cr2_vcov, AmeAveraging};
use panelclim::panel::{compile, CompileOptions, ModelSpec};
use panelclim::synth::{generate, SynthConfig};

fn main() -> panelclim::Result<()> {
    let spec = ModelSpec::preset("m5")?;
    let data = generate(&SynthConfig { spec: spec.clone(), seed: 7, ..SynthConfig::default() })?;
    let panel = data.panel(&spec)?;
    let design = compile(&panel, &spec, &CompileOptions::default())?;
    let f = fit(&design)?;
    println!("theta {:?}  sigma2 {:.3e}  reml loglik {:.3}", f.theta, f.sigma2_eps, f.loglik_reml);

    let (robust, parts) = cr2_vcov(&f, &design)?;
    println!("\n{:<18} {:>11} {:>10} {:>10} {:>7}", "term", "estimate", "model se", "cr2 se", "df");
    for (j, name) in f.column_names.iter().enumerate().filter(|(_, n)| n.contains("Temp") || n.contains("Precip")) {
        println!(
            "{name:<18} {:>11.5} {:>10.5} {:>10.5} {:>7.2}",
            f.beta[j],
            f.vcov_model[j][j].sqrt(),
            robust.se(j),
            robust.df[j]
        );
    }

    println!("\naverage marginal effects (per degree C or per percentage point)");
    for m in all_margins(&f, &robust, &parts, &panel, AmeAveraging::Pooled)? {
        println!("{:<16} {:>10.6}  [{:>9.6}, {:>9.6}]  p = {:.3}", m.variable, m.ame, m.ci_low, m.ci_high, m.p_value);
    }
    Ok(())
}
