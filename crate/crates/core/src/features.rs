//! Model-ready variables: seasonal climate aggregates, anomalies, growth
//! rates, index transforms and event indicators.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{data_err, Error, Result};
use crate::ingest::{EconTable, EventRecord, IndexName, IndexSeries, StationMeta, StationRecord};
use crate::types::{Province, Season};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Unweighted,
    Population,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unweighted" => Ok(Weighting::Unweighted),
            "population" => Ok(Weighting::Population),
            _ => Err(Error::Config(format!("unknown weighting '{s}'"))),
        }
    }
}

impl Weighting {
    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::Unweighted => "unweighted",
            Weighting::Population => "population",
        }
    }
}

/// Which calendar year a December belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WinterConvention {
    /// Winter of year t = December of t-1, January and February of t.
    #[default]
    PrecedingDecember,
    /// Winter of year t = January, February and December of t.
    SameYear,
}

impl WinterConvention {
    /// Calendar (year, month) pairs making up `season` of `year`.
    pub fn months(self, season: Season, year: i32) -> [(i32, u32); 3] {
        let m = season.months();
        match (season, self) {
            (Season::Winter, WinterConvention::PrecedingDecember) => {
                [(year - 1, 12), (year, 1), (year, 2)]
            }
            _ => [(year, m[0]), (year, m[1]), (year, m[2])],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonalCell {
    pub province: Province,
    pub season: Season,
    pub year: i32,
    pub mean_temp: f64,
    /// Mean of monthly totals, mm.
    pub mean_precip: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeasonalClimate {
    pub cells: Vec<SeasonalCell>,
    /// Cells left out because a defining month had no contributing station.
    pub incomplete: Vec<(Province, Season, i32)>,
}

impl SeasonalClimate {
    pub fn index(&self) -> BTreeMap<(Province, Season, i32), SeasonalCell> {
        self.cells.iter().map(|c| ((c.province, c.season, c.year), *c)).collect()
    }
}

/// Station weights from sub-region populations: each retained station's
/// population over the total across retained stations of its province.
pub fn population_weights(retained: &[StationMeta]) -> Result<HashMap<String, f64>> {
    let mut totals: BTreeMap<Province, f64> = BTreeMap::new();
    for m in retained {
        let pop = m.subregion_population.ok_or_else(|| {
            data_err(format!(
                "population weighting needs subregion_population for station {}",
                m.station_id
            ))
        })?;
        *totals.entry(m.province).or_default() += pop;
    }
    if let Some((p, _)) = totals.iter().find(|(_, t)| **t <= 0.0) {
        return Err(data_err(format!("total sub-region population of {p} is zero")));
    }
    Ok(retained
        .iter()
        .map(|m| (m.station_id.clone(), m.subregion_population.unwrap() / totals[&m.province]))
        .collect())
}

#[derive(Default, Clone, Copy)]
struct Acc {
    wsum: f64,
    sum: f64,
}

impl Acc {
    fn add(&mut self, w: f64, v: f64) {
        self.wsum += w;
        self.sum += w * v;
    }

    fn mean(self) -> Option<f64> {
        (self.wsum > 0.0).then(|| self.sum / self.wsum)
    }
}

/// Averages retained stations' monthly values into provincial seasonal
/// means: a (weighted) mean across stations for each month, then the plain
/// mean of the season's three months. Monthly weights are renormalized over
/// the stations reporting that month, so equal weights reproduce the
/// unweighted mean.
pub fn seasonalize(
    records: &[StationRecord],
    retained: &[StationMeta],
    weighting: Weighting,
    winter: WinterConvention,
) -> Result<SeasonalClimate> {
    let weights: HashMap<String, f64> = match weighting {
        Weighting::Unweighted => retained.iter().map(|m| (m.station_id.clone(), 1.0)).collect(),
        Weighting::Population => population_weights(retained)?,
    };
    let province_of: HashMap<&str, Province> =
        retained.iter().map(|m| (m.station_id.as_str(), m.province)).collect();

    let mut monthly: BTreeMap<(Province, i32, u32), (Acc, Acc)> = BTreeMap::new();
    for r in records {
        let Some(&prov) = province_of.get(r.station_id.as_str()) else {
            continue;
        };
        let w = weights[r.station_id.as_str()];
        let e = monthly.entry((prov, r.year, r.month)).or_default();
        if let Some(t) = r.mean_temp {
            e.0.add(w, t);
        }
        if let Some(p) = r.total_precip {
            e.1.add(w, p);
        }
    }

    let provinces: BTreeSet<Province> = retained.iter().map(|m| m.province).collect();
    let years: BTreeSet<i32> = monthly.keys().map(|k| k.1).collect();
    let mut out = SeasonalClimate::default();
    let mut any_cell: BTreeSet<(Province, Season)> = BTreeSet::new();
    for &prov in &provinces {
        for season in Season::ALL {
            for &year in &years {
                let months = winter.months(season, year);
                let vals: Vec<(Option<f64>, Option<f64>)> = months
                    .iter()
                    .map(|&(y, m)| {
                        monthly
                            .get(&(prov, y, m))
                            .map(|(t, p)| (t.mean(), p.mean()))
                            .unwrap_or((None, None))
                    })
                    .collect();
                let present = vals.iter().filter(|(t, p)| t.is_some() || p.is_some()).count();
                if present == 0 {
                    // season entirely outside the observed record
                    continue;
                }
                if vals.iter().all(|(t, p)| t.is_some() && p.is_some()) {
                    let t = vals.iter().map(|v| v.0.unwrap()).sum::<f64>() / 3.0;
                    let p = vals.iter().map(|v| v.1.unwrap()).sum::<f64>() / 3.0;
                    out.cells.push(SeasonalCell {
                        province: prov,
                        season,
                        year,
                        mean_temp: t,
                        mean_precip: p,
                    });
                    any_cell.insert((prov, season));
                } else {
                    out.incomplete.push((prov, season, year));
                }
            }
        }
    }
    for &prov in &provinces {
        for season in Season::ALL {
            if !any_cell.contains(&(prov, season)) {
                return Err(data_err(format!(
                    "{prov} {season}: no season has contributing stations in all three months"
                )));
            }
        }
    }
    if !out.incomplete.is_empty() {
        log::warn!("{} seasonal cells incomplete and left missing", out.incomplete.len());
    }
    Ok(out)
}

fn baseline_means(
    sc: &SeasonalClimate,
    baseline: &RangeInclusive<i32>,
    value: impl Fn(&SeasonalCell) -> f64,
) -> Result<BTreeMap<(Province, Season), f64>> {
    let mut sums: BTreeMap<(Province, Season), (f64, BTreeSet<i32>)> = BTreeMap::new();
    for c in &sc.cells {
        let e = sums.entry((c.province, c.season)).or_insert((0.0, BTreeSet::new()));
        if baseline.contains(&c.year) {
            e.0 += value(c);
            e.1.insert(c.year);
        }
    }
    let n = (baseline.end() - baseline.start() + 1) as usize;
    let mut out = BTreeMap::new();
    for (key, (sum, years)) in sums {
        if years.len() != n {
            let missing: Vec<i32> = baseline.clone().filter(|y| !years.contains(y)).collect();
            return Err(data_err(format!(
                "{} {}: baseline years missing {missing:?}",
                key.0, key.1
            )));
        }
        out.insert(key, sum / n as f64);
    }
    Ok(out)
}

/// Temperature anomaly: seasonal value minus its baseline-period mean.
pub fn temp_anomaly(
    sc: &SeasonalClimate,
    baseline: RangeInclusive<i32>,
) -> Result<BTreeMap<(Province, Season, i32), f64>> {
    let means = baseline_means(sc, &baseline, |c| c.mean_temp)?;
    Ok(sc
        .cells
        .iter()
        .map(|c| ((c.province, c.season, c.year), c.mean_temp - means[&(c.province, c.season)]))
        .collect())
}

/// Precipitation anomaly in percent of the baseline-period mean.
pub fn precip_anomaly(
    sc: &SeasonalClimate,
    baseline: RangeInclusive<i32>,
) -> Result<BTreeMap<(Province, Season, i32), f64>> {
    let means = baseline_means(sc, &baseline, |c| c.mean_precip)?;
    if let Some((k, _)) = means.iter().find(|(_, m)| **m <= 0.0) {
        return Err(data_err(format!(
            "{} {}: baseline mean precipitation is zero",
            k.0, k.1
        )));
    }
    Ok(sc
        .cells
        .iter()
        .map(|c| {
            let m = means[&(c.province, c.season)];
            ((c.province, c.season, c.year), (c.mean_precip - m) / m * 100.0)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyCell {
    pub province: Province,
    pub season: Season,
    pub year: i32,
    /// °C.
    pub temp_anomaly: f64,
    /// Percent.
    pub precip_anomaly: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineLevel {
    pub province: Province,
    pub season: Season,
    pub temp_mean: f64,
    pub precip_mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnomalyPanel {
    pub weighting: Weighting,
    pub baseline: (i32, i32),
    pub cells: Vec<AnomalyCell>,
    /// Baseline-period seasonal means, the anchor levels for scenario paths.
    pub levels: Vec<BaselineLevel>,
}

impl AnomalyPanel {
    pub fn index(&self) -> BTreeMap<(Province, Season, i32), AnomalyCell> {
        self.cells.iter().map(|c| ((c.province, c.season, c.year), *c)).collect()
    }

    pub fn level(&self, p: Province, s: Season) -> Option<BaselineLevel> {
        self.levels.iter().find(|l| l.province == p && l.season == s).copied()
    }
}

/// Both anomaly series plus the baseline levels they are measured from.
pub fn anomaly_panel(
    sc: &SeasonalClimate,
    baseline: RangeInclusive<i32>,
    weighting: Weighting,
) -> Result<AnomalyPanel> {
    let t = temp_anomaly(sc, baseline.clone())?;
    let p = precip_anomaly(sc, baseline.clone())?;
    let tm = baseline_means(sc, &baseline, |c| c.mean_temp)?;
    let pm = baseline_means(sc, &baseline, |c| c.mean_precip)?;
    let cells = sc
        .cells
        .iter()
        .map(|c| {
            let k = (c.province, c.season, c.year);
            AnomalyCell {
                province: c.province,
                season: c.season,
                year: c.year,
                temp_anomaly: t[&k],
                precip_anomaly: p[&k],
            }
        })
        .collect();
    let levels = tm
        .iter()
        .map(|(&(province, season), &temp_mean)| BaselineLevel {
            province,
            season,
            temp_mean,
            precip_mean: pm[&(province, season)],
        })
        .collect();
    Ok(AnomalyPanel { weighting, baseline: (*baseline.start(), *baseline.end()), cells, levels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthObs {
    pub province: Province,
    pub sector: String,
    pub year: i32,
    pub pcgr: f64,
}

/// Per-capita growth as the log difference of GDP per capita between
/// consecutive years; the first year of each series only serves as origin.
pub fn pcgr(econ: &EconTable) -> Result<Vec<GrowthObs>> {
    let mut per: BTreeMap<(Province, String), BTreeMap<i32, f64>> = BTreeMap::new();
    for r in &econ.rows {
        let y = r.gdp_chained / r.population;
        if !(y > 0.0 && y.is_finite()) {
            return Err(data_err(format!(
                "nonpositive GDP per capita at ({}, {}, {})",
                r.province, r.year, r.sector
            )));
        }
        per.entry((r.province, r.sector.clone())).or_default().insert(r.year, y);
    }
    let mut out = Vec::new();
    for ((province, sector), series) in per {
        for (&year, &y) in &series {
            if let Some(&prev) = series.get(&(year - 1)) {
                out.push(GrowthObs { province, sector: sector.clone(), year, pcgr: (y / prev).ln() });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexGrowthObs {
    pub name: IndexName,
    pub province: Option<Province>,
    pub year: i32,
    pub value: f64,
}

/// Log differences for world GDP and the commodity indices; the target rate
/// and unemployment pass through as levels.
pub fn index_growth(series: &IndexSeries) -> Result<Vec<IndexGrowthObs>> {
    let mut per: BTreeMap<(IndexName, Option<Province>), BTreeMap<i32, f64>> = BTreeMap::new();
    for o in &series.obs {
        per.entry((o.name, o.province)).or_default().insert(o.year, o.value);
    }
    let mut out = Vec::new();
    for ((name, province), s) in per {
        for (&year, &v) in &s {
            if name.is_level() {
                out.push(IndexGrowthObs { name, province, year, value: v });
                continue;
            }
            if v <= 0.0 {
                return Err(data_err(format!(
                    "{} has nonpositive value {v} in {year}",
                    name.as_str()
                )));
            }
            if let Some(&prev) = s.get(&(year - 1)) {
                out.push(IndexGrowthObs { name, province, year, value: (v / prev).ln() });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMatrix {
    pub event_ids: Vec<u32>,
    pub labels: Vec<String>,
    /// Row keys, aligned with each column.
    pub rows: Vec<(Province, i32)>,
    /// One 0/1 column per event.
    pub columns: Vec<Vec<f64>>,
}

/// One indicator column per event: 1 where the row's province is affected
/// and its year is the event year.
pub fn event_matrix(events: &[EventRecord], rows: &[(Province, i32)]) -> EventMatrix {
    let columns = events
        .iter()
        .map(|e| {
            rows.iter()
                .map(|(p, y)| f64::from(u8::from(*y == e.year && e.provinces_affected.contains(p))))
                .collect()
        })
        .collect();
    EventMatrix {
        event_ids: events.iter().map(|e| e.event_id).collect(),
        labels: events.iter().map(|e| e.label.clone()).collect(),
        rows: rows.to_vec(),
        columns,
    }
}
