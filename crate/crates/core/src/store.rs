//! On-disk store of normalized tables with content-hashed manifests.
//!
//! Stage one (ingest) writes cleaned raw inputs in the default schema
//! layout; stage two (features) writes the model-ready tables read by the
//! fitting stages.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{AnomalyCell, AnomalyPanel, BaselineLevel, GrowthObs, IndexGrowthObs, SeasonalClimate, Weighting};
use crate::ingest::{
    load_econ, load_events, load_indices, load_rcp, load_stations, write_stations, CoverageResult,
    EconTable, EventRecord, IndexSeries, LoadReport, RcpDeltaTable, Schema, StationCoverage, StationLoad,
};
use crate::panel::PanelInputs;
use crate::textio::{fmt_num, hash_file, read_json, write_json, write_table};

pub const STATIONS: &str = "stations.csv";
pub const COVERAGE: &str = "station_coverage.csv";
pub const ECON: &str = "econ.csv";
pub const INDICES: &str = "indices.csv";
pub const EVENTS: &str = "events.csv";
pub const RCP: &str = "rcp.csv";
pub const SEASONAL: &str = "seasonal.csv";
pub const ANOMALIES: &str = "anomalies.csv";
pub const BASELINE: &str = "climate_baseline.csv";
pub const GROWTH: &str = "growth.csv";
pub const INDEX_GROWTH: &str = "index_growth.csv";
pub const INGEST_MANIFEST: &str = "ingest_manifest.json";
pub const FEATURES_MANIFEST: &str = "features_manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tables: BTreeMap<String, TableEntry>,
    /// Dropped-row counts by reason.
    pub drops: BTreeMap<String, usize>,
    /// Content hashes of the files this stage read.
    pub inputs: BTreeMap<String, String>,
    pub notes: Vec<String>,
    pub config: serde_json::Value,
    /// Cache key of the stage run that produced this manifest.
    pub key: String,
}

impl Manifest {
    pub fn new(stage: &str, config: serde_json::Value) -> Self {
        Manifest { stage: stage.into(), config, ..Manifest::default() }
    }

    pub fn add(&mut self, name: &str, rows: usize, sha256: String) {
        self.tables.insert(name.into(), TableEntry { rows, sha256 });
    }

    /// Combined hash of the stage's outputs, used for cache keys downstream.
    pub fn output_hash(&self) -> String {
        let joined: String = self.tables.iter().map(|(k, v)| format!("{k}:{}\n", v.sha256)).collect();
        crate::textio::sha256_hex(joined.as_bytes())
    }
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    rdr.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(|e| Error::csv(path, e))
}

fn opt_code(p: Option<crate::types::Province>) -> String {
    p.map(|p| p.code().to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Stage one
// ---------------------------------------------------------------------------

/// Validated raw inputs after cleaning.
#[derive(Debug, Clone)]
pub struct Stage1 {
    pub stations: StationLoad,
    pub coverage: CoverageResult,
    pub econ: EconTable,
    pub indices: IndexSeries,
    pub events: Vec<EventRecord>,
    pub rcp: RcpDeltaTable,
}

pub fn write_econ(path: &Path, econ: &EconTable) -> Result<String> {
    let rows: Vec<Vec<String>> = econ
        .rows
        .iter()
        .map(|r| {
            vec![
                r.province.code().into(),
                r.year.to_string(),
                r.sector.clone(),
                fmt_num(r.gdp_chained),
                fmt_num(r.population),
            ]
        })
        .collect();
    write_table(path, &["province", "year", "sector", "gdp_chained", "population"], &rows)
}

pub fn write_indices(path: &Path, series: &IndexSeries) -> Result<String> {
    let rows: Vec<Vec<String>> = series
        .obs
        .iter()
        .map(|o| vec![o.name.as_str().into(), opt_code(o.province), o.year.to_string(), fmt_num(o.value)])
        .collect();
    write_table(path, &["name", "province", "year", "value"], &rows)
}

pub fn write_events(path: &Path, events: &[EventRecord]) -> Result<String> {
    let rows: Vec<Vec<String>> = events
        .iter()
        .map(|e| {
            let provinces = if e.provinces_affected.len() == crate::types::Province::ALL.len() {
                "All".to_string()
            } else {
                e.provinces_affected.iter().map(|p| p.code()).collect::<Vec<_>>().join(";")
            };
            vec![e.event_id.to_string(), e.label.clone(), e.year.to_string(), e.month.to_string(), provinces]
        })
        .collect();
    write_table(path, &["event_id", "label", "year", "month", "provinces"], &rows)
}

pub fn write_rcp(path: &Path, rcp: &RcpDeltaTable) -> Result<String> {
    let rows: Vec<Vec<String>> = rcp
        .cells
        .iter()
        .map(|((s, p, season, h), d)| {
            vec![
                s.label().into(),
                p.code().into(),
                season.name().into(),
                h.as_str().into(),
                fmt_num(d.temp_delta),
                fmt_num(d.precip_delta),
            ]
        })
        .collect();
    write_table(path, &["scenario", "province", "season", "horizon", "temp_delta", "precip_delta"], &rows)
}

fn write_coverage(path: &Path, cov: &CoverageResult) -> Result<String> {
    let rows: Vec<Vec<String>> = cov
        .stations
        .iter()
        .map(|s| {
            vec![
                s.station_id.clone(),
                s.province.code().into(),
                s.temp_months.to_string(),
                s.precip_months.to_string(),
                s.retained.to_string(),
            ]
        })
        .collect();
    write_table(path, &["station_id", "province", "temp_months", "precip_months", "retained"], &rows)
}

pub fn write_stage1(dir: &Path, s: &Stage1, manifest: &mut Manifest) -> Result<()> {
    manifest.add(STATIONS, s.stations.records.len(), write_stations(&dir.join(STATIONS), &s.stations)?);
    manifest.add(COVERAGE, s.coverage.stations.len(), write_coverage(&dir.join(COVERAGE), &s.coverage)?);
    manifest.add(ECON, s.econ.rows.len(), write_econ(&dir.join(ECON), &s.econ)?);
    manifest.add(INDICES, s.indices.obs.len(), write_indices(&dir.join(INDICES), &s.indices)?);
    manifest.add(EVENTS, s.events.len(), write_events(&dir.join(EVENTS), &s.events)?);
    manifest.add(RCP, s.rcp.cells.len(), write_rcp(&dir.join(RCP), &s.rcp)?);
    let excluded = s.coverage.stations.iter().filter(|c| !c.retained).count();
    manifest.drops.insert("stations_below_coverage".into(), excluded);
    write_json(&dir.join(INGEST_MANIFEST), manifest)?;
    Ok(())
}

/// Reloads the normalized stage-one tables.
pub fn load_stage1(dir: &Path) -> Result<Stage1> {
    let schema = Schema::default();
    let stations = load_stations(&dir.join(STATIONS), &schema)?;
    let cov: Vec<StationCoverage> = read_rows(&dir.join(COVERAGE))?;
    let retained_ids: std::collections::BTreeSet<&str> =
        cov.iter().filter(|c| c.retained).map(|c| c.station_id.as_str()).collect();
    let retained = stations.meta.iter().filter(|m| retained_ids.contains(m.station_id.as_str())).cloned().collect();
    let mut maxima: BTreeMap<_, (u64, u64)> = BTreeMap::new();
    for c in &cov {
        let e = maxima.entry(c.province).or_default();
        e.0 = e.0.max(c.temp_months);
        e.1 = e.1.max(c.precip_months);
    }
    Ok(Stage1 {
        coverage: CoverageResult { retained, stations: cov, maxima },
        stations,
        econ: load_econ(&dir.join(ECON), &schema)?,
        indices: load_indices(&dir.join(INDICES), &schema)?,
        events: load_events(&dir.join(EVENTS), &schema)?,
        rcp: load_rcp(&dir.join(RCP), &schema)?,
    })
}

/// Raw drop counts merged into a manifest.
pub fn record_report(manifest: &mut Manifest, report: &LoadReport) {
    for (k, v) in &report.dropped {
        *manifest.drops.entry(k.clone()).or_default() += v;
    }
    *manifest.drops.entry("row_errors".into()).or_default() += report.error_count;
}

// ---------------------------------------------------------------------------
// Stage two
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnomalyRow {
    province: crate::types::Province,
    season: crate::types::Season,
    year: i32,
    temp_anomaly: f64,
    precip_anomaly: f64,
    weighting: Weighting,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BaselineRow {
    province: crate::types::Province,
    season: crate::types::Season,
    baseline_start: i32,
    baseline_end: i32,
    temp_mean: f64,
    precip_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexGrowthRow {
    name: crate::ingest::IndexName,
    province: Option<crate::types::Province>,
    year: i32,
    value: f64,
}

pub fn write_stage2(
    dir: &Path,
    seasonal: Option<&SeasonalClimate>,
    inputs: &PanelInputs,
    rcp: &RcpDeltaTable,
    manifest: &mut Manifest,
) -> Result<()> {
    if let Some(sc) = seasonal {
        let rows: Vec<Vec<String>> = sc
            .cells
            .iter()
            .map(|c| {
                vec![
                    c.province.code().into(),
                    c.season.name().into(),
                    c.year.to_string(),
                    fmt_num(c.mean_temp),
                    fmt_num(c.mean_precip),
                ]
            })
            .collect();
        let h = write_table(&dir.join(SEASONAL), &["province", "season", "year", "mean_temp", "mean_precip"], &rows)?;
        manifest.add(SEASONAL, rows.len(), h);
        manifest.drops.insert("incomplete_seasonal_cells".into(), sc.incomplete.len());
    }
    let a = &inputs.anomalies;
    let rows: Vec<Vec<String>> = a
        .cells
        .iter()
        .map(|c| {
            vec![
                c.province.code().into(),
                c.season.name().into(),
                c.year.to_string(),
                fmt_num(c.temp_anomaly),
                fmt_num(c.precip_anomaly),
                a.weighting.as_str().into(),
            ]
        })
        .collect();
    let h = write_table(
        &dir.join(ANOMALIES),
        &["province", "season", "year", "temp_anomaly", "precip_anomaly", "weighting"],
        &rows,
    )?;
    manifest.add(ANOMALIES, rows.len(), h);
    let rows: Vec<Vec<String>> = a
        .levels
        .iter()
        .map(|l| {
            vec![
                l.province.code().into(),
                l.season.name().into(),
                a.baseline.0.to_string(),
                a.baseline.1.to_string(),
                fmt_num(l.temp_mean),
                fmt_num(l.precip_mean),
            ]
        })
        .collect();
    let h = write_table(
        &dir.join(BASELINE),
        &["province", "season", "baseline_start", "baseline_end", "temp_mean", "precip_mean"],
        &rows,
    )?;
    manifest.add(BASELINE, rows.len(), h);
    let rows: Vec<Vec<String>> = inputs
        .growth
        .iter()
        .map(|g| vec![g.province.code().into(), g.sector.clone(), g.year.to_string(), fmt_num(g.pcgr)])
        .collect();
    let h = write_table(&dir.join(GROWTH), &["province", "sector", "year", "pcgr"], &rows)?;
    manifest.add(GROWTH, rows.len(), h);
    let rows: Vec<Vec<String>> = inputs
        .index_growth
        .iter()
        .map(|o| vec![o.name.as_str().into(), opt_code(o.province), o.year.to_string(), fmt_num(o.value)])
        .collect();
    let h = write_table(&dir.join(INDEX_GROWTH), &["name", "province", "year", "value"], &rows)?;
    manifest.add(INDEX_GROWTH, rows.len(), h);
    manifest.add(EVENTS, inputs.events.len(), write_events(&dir.join(EVENTS), &inputs.events)?);
    manifest.add(RCP, rcp.cells.len(), write_rcp(&dir.join(RCP), rcp)?);
    write_json(&dir.join(FEATURES_MANIFEST), manifest)?;
    Ok(())
}

/// Model-ready tables of a store.
#[derive(Debug, Clone)]
pub struct Stage2 {
    pub inputs: PanelInputs,
    pub rcp: RcpDeltaTable,
    pub manifest: Manifest,
}

pub fn load_stage2(dir: &Path) -> Result<Stage2> {
    let manifest: Manifest = read_json(&dir.join(FEATURES_MANIFEST))?;
    for (name, entry) in &manifest.tables {
        let actual = hash_file(&dir.join(name))?;
        if actual != entry.sha256 {
            return Err(Error::Data(format!("{name} does not match its manifest hash")));
        }
    }
    let anomalies: Vec<AnomalyRow> = read_rows(&dir.join(ANOMALIES))?;
    let baseline: Vec<BaselineRow> = read_rows(&dir.join(BASELINE))?;
    let weighting = anomalies.first().map(|r| r.weighting).unwrap_or_default();
    let span = baseline.first().map(|b| (b.baseline_start, b.baseline_end)).unwrap_or((1998, 2017));
    let panel = AnomalyPanel {
        weighting,
        baseline: span,
        cells: anomalies
            .iter()
            .map(|r| AnomalyCell {
                province: r.province,
                season: r.season,
                year: r.year,
                temp_anomaly: r.temp_anomaly,
                precip_anomaly: r.precip_anomaly,
            })
            .collect(),
        levels: baseline
            .iter()
            .map(|b| BaselineLevel {
                province: b.province,
                season: b.season,
                temp_mean: b.temp_mean,
                precip_mean: b.precip_mean,
            })
            .collect(),
    };
    let growth: Vec<GrowthObs> = read_rows(&dir.join(GROWTH))?;
    let index_rows: Vec<IndexGrowthRow> = read_rows(&dir.join(INDEX_GROWTH))?;
    let schema = Schema::default();
    Ok(Stage2 {
        inputs: PanelInputs {
            anomalies: panel,
            growth,
            index_growth: index_rows
                .into_iter()
                .map(|r| IndexGrowthObs { name: r.name, province: r.province, year: r.year, value: r.value })
                .collect(),
            events: load_events(&dir.join(EVENTS), &schema)?,
        },
        rcp: load_rcp(&dir.join(RCP), &schema)?,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn stage_two_round_trips() {
        let data = generate(&SynthConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("features", serde_json::Value::Null);
        write_stage2(dir.path(), None, &data.inputs, &data.rcp, &mut m).unwrap();
        let back = load_stage2(dir.path()).unwrap();
        assert_eq!(back.rcp.cells.len(), data.rcp.cells.len());
        for (k, d) in &data.rcp.cells {
            assert!((back.rcp.cells[k].temp_delta - d.temp_delta).abs() < 1e-12);
        }
        assert_eq!(back.inputs.events, data.inputs.events);
        assert_eq!(back.inputs.growth.len(), data.inputs.growth.len());
        for (a, b) in back.inputs.growth.iter().zip(&data.inputs.growth) {
            assert!((a.pcgr - b.pcgr).abs() <= 1e-9 * b.pcgr.abs().max(1e-3));
        }
        std::fs::write(dir.path().join(GROWTH), "tampered").unwrap();
        assert!(load_stage2(dir.path()).is_err());
    }
}
