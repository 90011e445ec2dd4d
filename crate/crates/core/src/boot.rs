//! Province block bootstrap of coefficients and projected trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit, FitResult};
use crate::panel::{compile, CompileOptions, ModelSpec, Panel, Term};
use crate::project::{project_impact, ClimateEffect, ScenarioPath};
use crate::stats::quantile_type7;
use crate::textio::fmt_num;
use crate::types::{Province, Scenario};

pub const DEFAULT_REPLICATES: usize = 1000;
/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub seed: u64,
    pub threads: usize,
    pub baseline_years: (i32, i32),
    pub horizon: i32,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings {
            replicates: DEFAULT_REPLICATES,
            seed: 20170101,
            threads: 1,
            baseline_years: (1998, 2017),
            horizon: crate::project::DEFAULT_HORIZON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    /// Drawn cluster labels, in draw order.
    pub draw: Vec<String>,
    pub ok: bool,
    pub error: Option<String>,
    /// Climate coefficients (design scale) in `BootstrapRun::climate_terms` order.
    pub climate_coefficients: Vec<f64>,
    /// Per province (in `BootstrapRun::provinces` order), percent impact by year.
    pub trajectories: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub province: Province,
    pub year: i32,
    pub point: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRun {
    pub scenario: Scenario,
    pub sector: String,
    pub seed: u64,
    pub quantile_method: String,
    pub provinces: Vec<Province>,
    pub years: Vec<i32>,
    pub climate_terms: Vec<String>,
    pub replicates: Vec<Replicate>,
    pub failures: usize,
    pub quantiles: Vec<QuantileRow>,
}

/// Cluster labels drawn with replacement for replicate `index`; each
/// replicate has its own stream of the seeded generator.
pub fn draw_clusters(labels: &[String], seed: u64, index: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    (0..labels.len()).map(|_| labels[rng.random_range(0..labels.len())].clone()).collect()
}

/// Stacks all rows of each drawn cluster; repeated draws become distinct
/// clusters labelled `XX#2`, `XX#3`, ...
pub fn resample_panel(panel: &Panel, draw: &[String]) -> Panel {
    let mut seen: std::collections::BTreeMap<&str, usize> = Default::default();
    let mut rows = Vec::with_capacity(panel.rows.len());
    for label in draw {
        let k = seen.entry(label.as_str()).or_insert(0);
        *k += 1;
        let new_label = if *k == 1 { label.clone() } else { format!("{label}#{k}") };
        rows.extend(panel.rows.iter().filter(|r| &r.cluster == label).map(|r| {
            let mut r = r.clone();
            r.cluster = new_label.clone();
            r
        }));
    }
    Panel { rows, ..panel.clone() }
}

/// Fit of one resampled panel.
pub fn replicate_fit(panel: &Panel, spec: &ModelSpec, draw: &[String]) -> Result<FitResult> {
    let resampled = resample_panel(panel, draw);
    let design = compile(&resampled, spec, &CompileOptions::default())?;
    let f = fit(&design)?;
    if !f.converged {
        return Err(Error::Numerical("replicate fit did not converge".into()));
    }
    Ok(f)
}

fn climate_coefficients(f: &FitResult, terms: &[Term]) -> Vec<f64> {
    terms.iter().map(|t| f.coef(t).unwrap_or(f64::NAN)).collect()
}

fn trajectories(
    f: &FitResult,
    panel: &Panel,
    path: &ScenarioPath,
    provinces: &[Province],
    settings: &BootstrapSettings,
) -> Result<Vec<Vec<f64>>> {
    provinces
        .iter()
        .map(|&p| {
            let effect = ClimateEffect::new(f, panel, p, settings.baseline_years)?;
            let t = project_impact(&effect, path, p, &panel.sector, settings.horizon)?;
            Ok(t.points.iter().map(|x| x.pct_delta_gdp).collect())
        })
        .collect()
}

/// Province block bootstrap: resample clusters, refit, project every
/// original province under each replicate's estimates and summarize with
/// pointwise type-7 quantiles.
pub fn block_bootstrap(
    panel: &Panel,
    spec: &ModelSpec,
    path: &ScenarioPath,
    settings: &BootstrapSettings,
) -> Result<BootstrapRun> {
    if settings.replicates == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    let labels = panel.clusters();
    let provinces = panel.provinces();
    let full = fit(&compile(panel, spec, &CompileOptions::default())?)?;
    let terms: Vec<Term> = full.terms.iter().filter(|t| t.is_climate()).cloned().collect();
    let point = trajectories(&full, panel, path, &provinces, settings)?;
    let years: Vec<i32> = (crate::project::FIRST_PROJECTED_YEAR - 1..=settings.horizon).collect();

    let run_one = |index: usize| -> Replicate {
        let draw = draw_clusters(&labels, settings.seed, index);
        let outcome = replicate_fit(panel, spec, &draw)
            .and_then(|f| Ok((climate_coefficients(&f, &terms), trajectories(&f, panel, path, &provinces, settings)?)));
        match outcome {
            Ok((climate_coefficients, trajectories)) => {
                Replicate { index, draw, ok: true, error: None, climate_coefficients, trajectories }
            }
            Err(e) => Replicate {
                index,
                draw,
                ok: false,
                error: Some(e.to_string()),
                climate_coefficients: Vec::new(),
                trajectories: Vec::new(),
            },
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let replicates: Vec<Replicate> = pool.install(|| (0..settings.replicates).into_par_iter().map(run_one).collect());

    let failures = replicates.iter().filter(|r| !r.ok).count();
    if failures as f64 > MAX_FAILURE_SHARE * settings.replicates as f64 {
        return Err(Error::Numerical(format!(
            "{failures} of {} bootstrap replicates failed",
            settings.replicates
        )));
    }
    if failures > 0 {
        log::warn!("{failures} bootstrap replicates failed and were excluded");
    }
    let mut quantiles = Vec::new();
    for (pi, &province) in provinces.iter().enumerate() {
        for (yi, &year) in years.iter().enumerate() {
            let mut vals: Vec<f64> =
                replicates.iter().filter(|r| r.ok).map(|r| r.trajectories[pi][yi]).collect();
            vals.sort_by(f64::total_cmp);
            quantiles.push(QuantileRow {
                province,
                year,
                point: point[pi][yi],
                q025: quantile_type7(&vals, 0.025),
                q975: quantile_type7(&vals, 0.975),
            });
        }
    }
    Ok(BootstrapRun {
        scenario: path.scenario,
        sector: panel.sector.clone(),
        seed: settings.seed,
        quantile_method: "type7".into(),
        provinces,
        years,
        climate_terms: terms.iter().map(Term::name).collect(),
        replicates,
        failures,
        quantiles,
    })
}

impl BootstrapRun {
    pub fn quantile_rows(&self) -> (Vec<&'static str>, Vec<Vec<String>>) {
        let header = vec!["scenario", "province", "sector", "year", "point", "q025", "q975"];
        let rows = self
            .quantiles
            .iter()
            .map(|q| {
                vec![
                    self.scenario.label().to_string(),
                    q.province.code().to_string(),
                    self.sector.clone(),
                    q.year.to_string(),
                    fmt_num(q.point),
                    fmt_num(q.q025),
                    fmt_num(q.q975),
                ]
            })
            .collect();
        (header, rows)
    }

    pub fn coefficient_rows(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec!["replicate".to_string(), "ok".to_string(), "draw".to_string()];
        header.extend(self.climate_terms.iter().cloned());
        let rows = self
            .replicates
            .iter()
            .map(|r| {
                let mut row = vec![r.index.to_string(), r.ok.to_string(), r.draw.join(";")];
                if r.ok {
                    row.extend(r.climate_coefficients.iter().map(|&b| fmt_num(b)));
                } else {
                    row.extend(self.climate_terms.iter().map(|_| "NA".to_string()));
                }
                row
            })
            .collect();
        (header, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_seeded_and_sized() {
        let labels: Vec<String> = Province::ALL.iter().map(|p| p.code().to_string()).collect();
        let a = draw_clusters(&labels, 7, 3);
        assert_eq!(a.len(), 10);
        assert_eq!(a, draw_clusters(&labels, 7, 3));
        assert_ne!(a, draw_clusters(&labels, 7, 4));
        assert!(a.iter().all(|l| labels.contains(l)));
    }
}
