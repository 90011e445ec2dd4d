//! Scenario climate paths from published deltas and compounded impacts of
//! the fitted climate terms on GDP per capita.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{data_err, Error, Result};
use crate::estimate::FitResult;
use crate::features::AnomalyPanel;
use crate::ingest::{Horizon, RcpDeltaTable};
use crate::panel::{Panel, Term};
use crate::textio::fmt_num;
use crate::types::{ClimateVar, Province, Scenario, Season};

pub const FIRST_PROJECTED_YEAR: i32 = 2018;
pub const DEFAULT_HORIZON: i32 = 2050;

/// Where the window-mean deltas are pinned in time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchoring {
    /// Deltas reached at 2040 and 2060, growth starting from 2014.
    #[default]
    Endpoint,
    /// Deltas reached at the window midpoints 2030.5 and 2050.5, zero at 2004.5.
    Midpoint,
}

impl Anchoring {
    pub fn anchors(self) -> [f64; 3] {
        match self {
            Anchoring::Endpoint => [2014.0, 2040.0, 2060.0],
            Anchoring::Midpoint => [2004.5, 2030.5, 2050.5],
        }
    }
}

impl std::str::FromStr for Anchoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "endpoint" => Ok(Anchoring::Endpoint),
            "midpoint" => Ok(Anchoring::Midpoint),
            _ => Err(Error::Config(format!("unknown anchoring '{s}'"))),
        }
    }
}

/// Piecewise-linear path through three anchors, extended linearly beyond
/// the outer anchors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorPath {
    pub points: [(f64, f64); 3],
}

impl AnchorPath {
    fn segment(&self, i: usize, t: f64) -> f64 {
        let (t0, v0) = self.points[i];
        let (t1, v1) = self.points[i + 1];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    pub fn value(&self, t: f64) -> f64 {
        if t <= self.points[1].0 {
            self.segment(0, t)
        } else {
            self.segment(1, t)
        }
    }

    /// Limits from the first and second segment at `t`.
    pub fn one_sided(&self, t: f64) -> (f64, f64) {
        (self.segment(0, t), self.segment(1, t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPoint {
    pub scenario: Scenario,
    pub province: Province,
    pub season: Season,
    pub year: i32,
    pub temp_level: f64,
    pub precip_level: f64,
    pub temp_anomaly_pred: f64,
    /// Percent.
    pub precip_anomaly_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPath {
    pub scenario: Scenario,
    pub anchoring: Anchoring,
    pub points: Vec<ScenarioPoint>,
}

impl ScenarioPath {
    /// Design-scale climate vector (°C, precipitation fraction) of one
    /// province-year.
    pub fn climate(&self, province: Province, year: i32) -> Option<[f64; 8]> {
        let mut out = [0.0; 8];
        let mut seen = 0;
        for p in self.points.iter().filter(|p| p.province == province && p.year == year) {
            out[ClimateVar::temp(p.season).index()] = p.temp_anomaly_pred;
            out[ClimateVar::precip(p.season).index()] = p.precip_anomaly_pred / 100.0;
            seen += 1;
        }
        (seen == Season::ALL.len()).then_some(out)
    }
}

/// Level paths for one cell: temperature additive, precipitation
/// multiplicative on the baseline level.
pub fn cell_paths(
    rcp: &RcpDeltaTable,
    scenario: Scenario,
    province: Province,
    season: Season,
    temp_mean: f64,
    precip_mean: f64,
    anchoring: Anchoring,
) -> Result<(AnchorPath, AnchorPath)> {
    let get = |h| {
        rcp.get(scenario, province, season, h).ok_or_else(|| {
            data_err(format!("no {} delta for {scenario}/{province}/{season}", h.as_str()))
        })
    };
    let near = get(Horizon::Near)?;
    let mid = get(Horizon::Mid)?;
    let [a0, a1, a2] = anchoring.anchors();
    let temp = AnchorPath {
        points: [(a0, temp_mean), (a1, temp_mean + near.temp_delta), (a2, temp_mean + mid.temp_delta)],
    };
    let precip = AnchorPath {
        points: [
            (a0, precip_mean),
            (a1, precip_mean * (1.0 + near.precip_delta / 100.0)),
            (a2, precip_mean * (1.0 + mid.precip_delta / 100.0)),
        ],
    };
    Ok((temp, precip))
}

/// Predicted seasonal levels and anomalies for every province with a
/// baseline level, years `FIRST_PROJECTED_YEAR..=horizon`.
pub fn extrapolate_climate(
    rcp: &RcpDeltaTable,
    baseline: &AnomalyPanel,
    scenario: Scenario,
    anchoring: Anchoring,
    horizon: i32,
) -> Result<ScenarioPath> {
    let mut points = Vec::new();
    for lvl in &baseline.levels {
        let (temp, precip) =
            cell_paths(rcp, scenario, lvl.province, lvl.season, lvl.temp_mean, lvl.precip_mean, anchoring)?;
        if lvl.precip_mean <= 0.0 {
            return Err(data_err(format!("zero baseline precipitation for {}/{}", lvl.province, lvl.season)));
        }
        for year in FIRST_PROJECTED_YEAR..=horizon {
            let t = temp.value(f64::from(year));
            let p = precip.value(f64::from(year));
            points.push(ScenarioPoint {
                scenario,
                province: lvl.province,
                season: lvl.season,
                year,
                temp_level: t,
                precip_level: p,
                temp_anomaly_pred: t - lvl.temp_mean,
                precip_anomaly_pred: (p - lvl.precip_mean) / lvl.precip_mean * 100.0,
            });
        }
    }
    if points.is_empty() {
        return Err(data_err("no baseline levels to extrapolate from"));
    }
    points.sort_by_key(|p| (p.province, p.year, p.season));
    Ok(ScenarioPath { scenario, anchoring, points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub year: i32,
    pub pct_delta_gdp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scenario: Scenario,
    pub province: Province,
    pub sector: String,
    pub points: Vec<TrajectoryPoint>,
}

/// Cumulative impact in percent: `100·(exp(Σ_{i≤k} d_i) − 1)`, prefixed by
/// a zero for the last observed year.
pub fn impact_from_differences(d: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(d.len() + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for &x in d {
        acc += x;
        out.push(100.0 * acc.exp_m1());
    }
    out
}

/// Fitted climate contribution minus its historical mean, the quantity the
/// projection compounds. Year effects, indices and events cancel.
pub struct ClimateEffect {
    terms: Vec<(Term, f64)>,
    /// Province random slopes per climate variable.
    slopes: BTreeMap<ClimateVar, f64>,
    /// Historical means of each term and of each sloped variable.
    term_means: Vec<f64>,
    slope_means: BTreeMap<ClimateVar, f64>,
}

impl ClimateEffect {
    /// Builds the effect for `province` from `fit`, with historical means
    /// over the province's panel rows in `baseline_years`.
    pub fn new(fit: &FitResult, panel: &Panel, province: Province, baseline_years: (i32, i32)) -> Result<Self> {
        let terms: Vec<(Term, f64)> = fit
            .terms
            .iter()
            .zip(&fit.beta)
            .filter(|(t, _)| t.is_climate())
            .map(|(t, b)| (t.clone(), *b))
            .collect();
        if terms.is_empty() {
            return Err(Error::Config("fit has no climate terms to project".into()));
        }
        let code = province.code();
        let hist: Vec<&[f64; 8]> = panel
            .rows
            .iter()
            .filter(|r| r.cluster == code && r.year >= baseline_years.0 && r.year <= baseline_years.1)
            .map(|r| &r.climate)
            .collect();
        if hist.is_empty() {
            return Err(data_err(format!("no historical rows for {province}")));
        }
        let mean = |f: &dyn Fn(&[f64; 8]) -> f64| hist.iter().map(|c| f(c)).sum::<f64>() / hist.len() as f64;
        let term_means = terms.iter().map(|(t, _)| mean(&|c| t.climate_value(c))).collect();
        let mut slopes = BTreeMap::new();
        let mut slope_means = BTreeMap::new();
        for block in &fit.blup {
            let Some(label) = block.name.strip_prefix("slope:") else { continue };
            let Some(var) = ClimateVar::ALL.into_iter().find(|v| v.label() == label) else { continue };
            let value = block.levels.iter().position(|l| l == code).map_or(0.0, |i| block.values[i]);
            slopes.insert(var, value);
            slope_means.insert(var, mean(&|c| c[var.index()]));
        }
        Ok(ClimateEffect { terms, slopes, term_means, slope_means })
    }

    /// Constructs an effect directly from coefficients and historical means.
    pub fn from_parts(terms: Vec<(Term, f64)>, term_means: Vec<f64>) -> Self {
        ClimateEffect { terms, slopes: BTreeMap::new(), term_means, slope_means: BTreeMap::new() }
    }

    /// Annual PCGR difference at a predicted design-scale climate vector.
    pub fn difference(&self, climate: &[f64; 8]) -> f64 {
        let fixed: f64 = self
            .terms
            .iter()
            .zip(&self.term_means)
            .map(|((t, b), m)| b * (t.climate_value(climate) - m))
            .sum();
        let random: f64 =
            self.slopes.iter().map(|(v, u)| u * (climate[v.index()] - self.slope_means[v])).sum();
        fixed + random
    }
}

/// Trajectory of one province from the last observed year to `horizon`.
pub fn project_impact(
    effect: &ClimateEffect,
    path: &ScenarioPath,
    province: Province,
    sector: &str,
    horizon: i32,
) -> Result<Trajectory> {
    let mut d = Vec::new();
    for year in FIRST_PROJECTED_YEAR..=horizon {
        let climate = path
            .climate(province, year)
            .ok_or_else(|| data_err(format!("scenario path lacks {province} {year}")))?;
        d.push(effect.difference(&climate));
    }
    let pct = impact_from_differences(&d);
    Ok(Trajectory {
        scenario: path.scenario,
        province,
        sector: sector.to_string(),
        points: pct
            .into_iter()
            .enumerate()
            .map(|(i, v)| TrajectoryPoint { year: FIRST_PROJECTED_YEAR - 1 + i as i32, pct_delta_gdp: v })
            .collect(),
    })
}

/// Trajectories for every province of the panel that the path covers.
pub fn project_all(
    fit: &FitResult,
    panel: &Panel,
    path: &ScenarioPath,
    baseline_years: (i32, i32),
    horizon: i32,
) -> Result<Vec<Trajectory>> {
    panel
        .provinces()
        .into_iter()
        .map(|p| {
            let effect = ClimateEffect::new(fit, panel, p, baseline_years)?;
            project_impact(&effect, path, p, &panel.sector, horizon)
        })
        .collect()
}

pub fn trajectory_rows(trajs: &[Trajectory]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec!["scenario", "province", "sector", "year", "pct_delta_gdp"];
    let rows = trajs
        .iter()
        .flat_map(|t| {
            t.points.iter().map(move |p| {
                vec![
                    t.scenario.label().to_string(),
                    t.province.code().to_string(),
                    t.sector.clone(),
                    p.year.to_string(),
                    fmt_num(p.pct_delta_gdp),
                ]
            })
        })
        .collect();
    (header, rows)
}

/// Plot-ready series: predicted anomalies, provincial trajectories and
/// end-of-horizon impacts per scenario.
pub fn plot_tables(paths: &[ScenarioPath], trajs: &[Trajectory]) -> Vec<(&'static str, Vec<&'static str>, Vec<Vec<String>>)> {
    let anomalies = paths
        .iter()
        .flat_map(|p| {
            p.points.iter().map(|c| {
                vec![
                    c.scenario.label().to_string(),
                    c.province.code().to_string(),
                    c.season.name().to_string(),
                    c.year.to_string(),
                    fmt_num(c.temp_anomaly_pred),
                    fmt_num(c.precip_anomaly_pred),
                ]
            })
        })
        .collect();
    let mut national: BTreeMap<(Scenario, Season, i32), (f64, f64, usize)> = BTreeMap::new();
    for c in paths.iter().flat_map(|p| &p.points) {
        let e = national.entry((c.scenario, c.season, c.year)).or_default();
        e.0 += c.temp_anomaly_pred;
        e.1 += c.precip_anomaly_pred;
        e.2 += 1;
    }
    let national_rows = national
        .into_iter()
        .map(|((s, season, y), (t, p, n))| {
            vec![
                s.label().to_string(),
                season.name().to_string(),
                y.to_string(),
                fmt_num(t / n as f64),
                fmt_num(p / n as f64),
            ]
        })
        .collect();
    let (_, traj_rows) = trajectory_rows(trajs);
    let final_rows = trajs
        .iter()
        .filter_map(|t| {
            let last = t.points.last()?;
            Some(vec![
                t.scenario.label().to_string(),
                t.province.code().to_string(),
                t.sector.clone(),
                last.year.to_string(),
                fmt_num(last.pct_delta_gdp),
            ])
        })
        .collect();
    vec![
        (
            "plot_anomalies.csv",
            vec!["scenario", "province", "season", "year", "temp_anomaly", "precip_anomaly"],
            anomalies,
        ),
        ("plot_national_anomalies.csv", vec!["scenario", "season", "year", "temp_anomaly", "precip_anomaly"], national_rows),
        ("plot_trajectories.csv", vec!["scenario", "province", "sector", "year", "pct_delta_gdp"], traj_rows),
        ("plot_final_impacts.csv", vec!["scenario", "province", "sector", "year", "pct_delta_gdp"], final_rows),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RcpDelta;

    fn table(near: f64, mid: f64) -> RcpDeltaTable {
        let mut t = RcpDeltaTable::default();
        for p in Province::ALL {
            for s in Season::ALL {
                t.cells.insert((Scenario::Rcp45, p, s, Horizon::Near), RcpDelta { temp_delta: near, precip_delta: 10.0 });
                t.cells.insert((Scenario::Rcp45, p, s, Horizon::Mid), RcpDelta { temp_delta: mid, precip_delta: 20.0 });
            }
        }
        t
    }

    #[test]
    fn linear_interpolation_between_anchors() {
        let (temp, precip) =
            cell_paths(&table(2.6, 3.0), Scenario::Rcp45, Province::ON, Season::Winter, -7.0, 200.0, Anchoring::Endpoint)
                .unwrap();
        let expected = -7.0 + 2.6 * (2027.0 - 2014.0) / 26.0;
        assert!((temp.value(2027.0) - expected).abs() < 1e-12);
        assert!((precip.value(2040.0) - 220.0).abs() < 1e-12);
        assert!((temp.value(2050.0) - (-7.0 + 2.6 + 0.4 * 0.5)).abs() < 1e-12);
        let (l, r) = temp.one_sided(2040.0);
        assert!((l - r).abs() < 1e-12);
    }

    #[test]
    fn constant_difference_compounds_in_closed_form() {
        let pct = impact_from_differences(&[-0.01; 33]);
        assert_eq!(pct[0], 0.0);
        assert!((pct[33] - 100.0 * ((-0.33f64).exp() - 1.0)).abs() < 1e-9);
        assert!((pct[33] + 28.1076).abs() < 1e-4);
    }

    #[test]
    fn composition_across_horizons() {
        let d: Vec<f64> = (0..20).map(|i| 0.003 * (i as f64).sin()).collect();
        let pct = impact_from_differences(&d);
        let lhs = 1.0 + pct[15] / 100.0;
        let rhs = (1.0 + pct[6] / 100.0) * d[6..15].iter().sum::<f64>().exp();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
