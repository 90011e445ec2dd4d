//! Parsing, validation and cleaning of raw inputs: station-month weather
//! records, GDP/population tables, economic indices, event lists and
//! scenario delta tables.
//!
//! All readers take a [`Schema`] that binds logical fields to column names,
//! because the upstream sources use heterogeneous layouts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{data_err, Error, Result};
use crate::types::{Province, Scenario, Season};

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub delimiter: char,
    pub stations: StationColumns,
    pub econ: EconColumns,
    pub indices: IndexColumns,
    pub events: EventColumns,
    pub rcp: RcpColumns,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            delimiter: ',',
            stations: StationColumns::default(),
            econ: EconColumns::default(),
            indices: IndexColumns::default(),
            events: EventColumns::default(),
            rcp: RcpColumns::default(),
        }
    }
}

macro_rules! column_map {
    ($name:ident { $($field:ident),* $(,)? }) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(default)]
        pub struct $name {
            $(pub $field: String,)*
        }

        impl Default for $name {
            fn default() -> Self {
                $name { $($field: stringify!($field).to_string(),)* }
            }
        }
    };
}

column_map!(StationColumns {
    station_id,
    province,
    latitude,
    longitude,
    year,
    month,
    mean_temp,
    total_precip,
    subregion_id,
    subregion_population,
});
column_map!(EconColumns { province, year, sector, gdp_chained, population });
column_map!(IndexColumns { name, province, year, value });
column_map!(EventColumns { event_id, label, year, month, provinces });
column_map!(RcpColumns { scenario, province, season, horizon, temp_delta, precip_delta });

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub station_id: String,
    pub province: Province,
    pub latitude: f64,
    pub longitude: f64,
    pub year: i32,
    pub month: u32,
    pub mean_temp: Option<f64>,
    pub total_precip: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub station_id: String,
    pub province: Province,
    pub latitude: f64,
    pub longitude: f64,
    pub subregion_id: Option<String>,
    pub subregion_population: Option<f64>,
}

impl StationMeta {
    fn same_station(&self, other: &StationMeta) -> bool {
        self.province == other.province
            && self.latitude == other.latitude
            && self.longitude == other.longitude
            && self.subregion_id == other.subregion_id
            && self.subregion_population == other.subregion_population
    }
}

/// Row accounting for one loaded table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub input_rows: usize,
    pub retained_rows: usize,
    /// Dropped row counts keyed by reason.
    pub dropped: BTreeMap<String, usize>,
    /// Row-level parse errors (1-based data row, message); capped at 100.
    pub errors: Vec<(usize, String)>,
    pub error_count: usize,
}

impl LoadReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }

    fn drop_row(&mut self, reason: &str) {
        *self.dropped.entry(reason.to_string()).or_default() += 1;
    }

    fn error_row(&mut self, row: usize, msg: String) {
        self.error_count += 1;
        if self.errors.len() < 100 {
            self.errors.push((row, msg));
        }
        self.drop_row("invalid");
    }
}

#[derive(Debug, Clone)]
pub struct StationLoad {
    pub records: Vec<StationRecord>,
    /// One entry per distinct station id, in order of first appearance.
    pub meta: Vec<StationMeta>,
    pub report: LoadReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconRow {
    pub province: Province,
    pub year: i32,
    pub sector: String,
    pub gdp_chained: f64,
    pub population: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EconTable {
    pub rows: Vec<EconRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexName {
    WorldGdp,
    EnergyIndex,
    NonenergyIndex,
    TargetRate,
    Unemployment,
}

impl IndexName {
    pub const ALL: [IndexName; 5] = [
        IndexName::WorldGdp,
        IndexName::EnergyIndex,
        IndexName::NonenergyIndex,
        IndexName::TargetRate,
        IndexName::Unemployment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IndexName::WorldGdp => "world_gdp",
            IndexName::EnergyIndex => "energy_index",
            IndexName::NonenergyIndex => "nonenergy_index",
            IndexName::TargetRate => "target_rate",
            IndexName::Unemployment => "unemployment",
        }
    }

    /// Rates enter as levels; everything else as log differences.
    pub fn is_level(self) -> bool {
        matches!(self, IndexName::TargetRate | IndexName::Unemployment)
    }

    pub fn is_provincial(self) -> bool {
        matches!(self, IndexName::Unemployment)
    }
}

impl std::str::FromStr for IndexName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        IndexName::ALL
            .into_iter()
            .find(|n| n.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| data_err(format!("unknown index series '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexObs {
    pub name: IndexName,
    pub province: Option<Province>,
    pub year: i32,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexSeries {
    pub obs: Vec<IndexObs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: u32,
    pub label: String,
    pub year: i32,
    pub month: u32,
    pub provinces_affected: BTreeSet<Province>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// 2021-2040 window.
    Near,
    /// 2041-2060 window.
    Mid,
}

impl Horizon {
    pub fn as_str(self) -> &'static str {
        match self {
            Horizon::Near => "near",
            Horizon::Mid => "mid",
        }
    }
}

impl std::str::FromStr for Horizon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "near" | "2021-2040" => Ok(Horizon::Near),
            "mid" | "2041-2060" | "2040-2060" => Ok(Horizon::Mid),
            _ => Err(data_err(format!("unknown horizon '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcpDelta {
    pub temp_delta: f64,
    /// Percent change.
    pub precip_delta: f64,
}

/// Published change factors keyed by (scenario, province, season, horizon).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RcpDeltaTable {
    pub cells: BTreeMap<(Scenario, Province, Season, Horizon), RcpDelta>,
}

impl RcpDeltaTable {
    pub fn get(&self, s: Scenario, p: Province, season: Season, h: Horizon) -> Option<RcpDelta> {
        self.cells.get(&(s, p, season, h)).copied()
    }

    pub fn scenarios(&self) -> BTreeSet<Scenario> {
        self.cells.keys().map(|k| k.0).collect()
    }

    /// Every (scenario, province, season) must carry both horizons.
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<(Scenario, Province, Season), BTreeSet<Horizon>> = BTreeMap::new();
        for &(s, p, season, h) in self.cells.keys() {
            seen.entry((s, p, season)).or_default().insert(h);
        }
        let missing: Vec<String> = seen
            .iter()
            .filter(|(_, hs)| hs.len() != 2)
            .map(|((s, p, season), hs)| {
                let lacking = if hs.contains(&Horizon::Near) { "mid" } else { "near" };
                format!("{s}/{p}/{season} lacks {lacking}")
            })
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(data_err(format!("incomplete delta table: {}", missing.join("; "))))
        }
    }
}

// ---------------------------------------------------------------------------
// Delimited-text plumbing
// ---------------------------------------------------------------------------

struct Table {
    header: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path, delimiter: char) -> Result<Table> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter as u8)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let header = rdr
            .headers()
            .map_err(|e| Error::csv(path, e))?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        let rows = rdr
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::csv(path, e))?;
        Ok(Table { header, rows })
    }

    fn col(&self, name: &str, path: &Path) -> Result<usize> {
        self.header.get(name).copied().ok_or_else(|| {
            Error::Config(format!("{}: missing required column '{name}'", path.display()))
        })
    }

    fn opt_col(&self, name: &str) -> Option<usize> {
        self.header.get(name).copied()
    }
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize) -> &'a str {
    rec.get(idx).unwrap_or("").trim()
}

fn is_missing(s: &str) -> bool {
    s.is_empty() || s.eq_ignore_ascii_case("NA")
}

fn parse_num(s: &str, what: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("non-numeric {what} '{s}'"))
}

fn parse_opt_num(s: &str, what: &str) -> std::result::Result<Option<f64>, String> {
    if is_missing(s) {
        Ok(None)
    } else {
        parse_num(s, what).map(Some)
    }
}

fn parse_int<T: std::str::FromStr>(s: &str, what: &str) -> std::result::Result<T, String> {
    s.parse::<T>().map_err(|_| format!("invalid {what} '{s}'"))
}

// ---------------------------------------------------------------------------
// Stations
// ---------------------------------------------------------------------------

enum RowOutcome {
    Ok(StationRecord, StationMeta),
    Drop(&'static str),
}

fn parse_station_row(
    rec: &csv::StringRecord,
    c: &StationIdx,
) -> std::result::Result<RowOutcome, String> {
    let station_id = field(rec, c.station_id).to_string();
    if station_id.is_empty() {
        return Err("empty station_id".into());
    }
    let province: Province = field(rec, c.province).parse().map_err(|e: Error| e.to_string())?;
    let lat_s = field(rec, c.latitude);
    let lon_s = field(rec, c.longitude);
    if is_missing(lat_s) || is_missing(lon_s) {
        return Ok(RowOutcome::Drop("missing_coordinates"));
    }
    let latitude = parse_num(lat_s, "latitude")?;
    let longitude = parse_num(lon_s, "longitude")?;
    if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
        return Ok(RowOutcome::Drop("coordinates_out_of_range"));
    }
    let year: i32 = parse_int(field(rec, c.year), "year")?;
    let month: u32 = parse_int(field(rec, c.month), "month")?;
    if !(1..=12).contains(&month) {
        return Err(format!("month {month} outside 1-12"));
    }
    let mean_temp = parse_opt_num(field(rec, c.mean_temp), "mean_temp")?;
    let total_precip = parse_opt_num(field(rec, c.total_precip), "total_precip")?;
    let subregion_id = c
        .subregion_id
        .map(|i| field(rec, i))
        .filter(|s| !is_missing(s))
        .map(str::to_string);
    let subregion_population = match c.subregion_population {
        Some(i) => parse_opt_num(field(rec, i), "subregion_population")?,
        None => None,
    };
    if subregion_population.is_some_and(|p| p < 0.0) {
        return Err("negative subregion_population".into());
    }
    let record = StationRecord {
        station_id: station_id.clone(),
        province,
        latitude,
        longitude,
        year,
        month,
        mean_temp,
        total_precip,
    };
    let meta = StationMeta {
        station_id,
        province,
        latitude,
        longitude,
        subregion_id,
        subregion_population,
    };
    Ok(RowOutcome::Ok(record, meta))
}

struct StationIdx {
    station_id: usize,
    province: usize,
    latitude: usize,
    longitude: usize,
    year: usize,
    month: usize,
    mean_temp: usize,
    total_precip: usize,
    subregion_id: Option<usize>,
    subregion_population: Option<usize>,
}

/// Loads station-month records.
///
/// Station metadata is taken from the first occurrence of each station id;
/// later rows that disagree with it, and repeated (station, year, month)
/// rows, are dropped as duplicates. Rows with missing or out-of-range
/// coordinates are dropped. Unparseable rows are collected as row errors and
/// become fatal when they exceed half of the input.
pub fn load_stations(path: &Path, schema: &Schema) -> Result<StationLoad> {
    let t = Table::read(path, schema.delimiter)?;
    let s = &schema.stations;
    let idx = StationIdx {
        station_id: t.col(&s.station_id, path)?,
        province: t.col(&s.province, path)?,
        latitude: t.col(&s.latitude, path)?,
        longitude: t.col(&s.longitude, path)?,
        year: t.col(&s.year, path)?,
        month: t.col(&s.month, path)?,
        mean_temp: t.col(&s.mean_temp, path)?,
        total_precip: t.col(&s.total_precip, path)?,
        subregion_id: t.opt_col(&s.subregion_id),
        subregion_population: t.opt_col(&s.subregion_population),
    };

    let mut report = LoadReport { input_rows: t.rows.len(), ..Default::default() };
    let mut records = Vec::new();
    let mut meta: Vec<StationMeta> = Vec::new();
    let mut meta_pos: HashMap<String, usize> = HashMap::new();
    let mut seen_months: BTreeSet<(String, i32, u32)> = BTreeSet::new();

    for (i, rec) in t.rows.iter().enumerate() {
        match parse_station_row(rec, &idx) {
            Err(msg) => report.error_row(i + 1, msg),
            Ok(RowOutcome::Drop(reason)) => {
                log::debug!("{}: row {} dropped ({reason})", path.display(), i + 1);
                report.drop_row(reason);
            }
            Ok(RowOutcome::Ok(record, m)) => {
                match meta_pos.get(&m.station_id) {
                    Some(&pos) if !meta[pos].same_station(&m) => {
                        report.drop_row("duplicate_station");
                        continue;
                    }
                    Some(_) => {}
                    None => {
                        meta_pos.insert(m.station_id.clone(), meta.len());
                        meta.push(m);
                    }
                }
                let key = (record.station_id.clone(), record.year, record.month);
                if !seen_months.insert(key) {
                    report.drop_row("duplicate_record");
                    continue;
                }
                records.push(record);
            }
        }
    }
    report.retained_rows = records.len();
    if report.error_count * 2 > report.input_rows {
        let sample: Vec<String> =
            report.errors.iter().take(5).map(|(r, m)| format!("row {r}: {m}")).collect();
        return Err(data_err(format!(
            "{}: {} of {} rows invalid ({})",
            path.display(),
            report.error_count,
            report.input_rows,
            sample.join("; ")
        )));
    }
    if report.dropped_total() > 0 {
        log::info!(
            "{}: dropped {} of {} station rows",
            path.display(),
            report.dropped_total(),
            report.input_rows
        );
    }
    Ok(StationLoad { records, meta, report })
}

/// Writes station records in the default schema layout, so the output can
/// be fed back through [`load_stations`].
pub fn write_stations(path: &Path, load: &StationLoad) -> Result<String> {
    let by_id: HashMap<&str, &StationMeta> =
        load.meta.iter().map(|m| (m.station_id.as_str(), m)).collect();
    let fmt_opt = |v: Option<f64>| v.map(crate::textio::fmt_num).unwrap_or_default();
    let rows: Vec<Vec<String>> = load
        .records
        .iter()
        .map(|r| {
            let m = by_id[r.station_id.as_str()];
            vec![
                r.station_id.clone(),
                r.province.to_string(),
                crate::textio::fmt_num(r.latitude),
                crate::textio::fmt_num(r.longitude),
                r.year.to_string(),
                r.month.to_string(),
                fmt_opt(r.mean_temp),
                fmt_opt(r.total_precip),
                m.subregion_id.clone().unwrap_or_default(),
                fmt_opt(m.subregion_population),
            ]
        })
        .collect();
    crate::textio::write_table(
        path,
        &[
            "station_id",
            "province",
            "latitude",
            "longitude",
            "year",
            "month",
            "mean_temp",
            "total_precip",
            "subregion_id",
            "subregion_population",
        ],
        &rows,
    )
}

/// Retention threshold as an exact fraction of the provincial maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageRule {
    pub numerator: u64,
    pub denominator: u64,
}

impl Default for CoverageRule {
    fn default() -> Self {
        CoverageRule { numerator: 9, denominator: 10 }
    }
}

impl CoverageRule {
    fn admits(self, count: u64, max: u64) -> bool {
        count * self.denominator >= max * self.numerator
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationCoverage {
    pub station_id: String,
    pub province: Province,
    pub temp_months: u64,
    pub precip_months: u64,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub retained: Vec<StationMeta>,
    pub stations: Vec<StationCoverage>,
    /// Provincial maxima of complete months: (temperature, precipitation).
    pub maxima: BTreeMap<Province, (u64, u64)>,
}

impl CoverageResult {
    pub fn retained_ids(&self) -> BTreeSet<String> {
        self.retained.iter().map(|m| m.station_id.clone()).collect()
    }
}

/// Keeps stations whose complete-month counts for temperature and
/// precipitation both reach the rule's fraction of the provincial maxima
/// over `period`.
pub fn coverage_filter(
    records: &[StationRecord],
    meta: &[StationMeta],
    period: std::ops::RangeInclusive<i32>,
    rule: CoverageRule,
) -> Result<CoverageResult> {
    if period.is_empty() {
        return Err(Error::Config("coverage period is empty".into()));
    }
    let mut counts: HashMap<&str, (u64, u64)> = HashMap::new();
    for r in records.iter().filter(|r| period.contains(&r.year)) {
        let c = counts.entry(r.station_id.as_str()).or_default();
        c.0 += r.mean_temp.is_some() as u64;
        c.1 += r.total_precip.is_some() as u64;
    }
    let mut maxima: BTreeMap<Province, (u64, u64)> = BTreeMap::new();
    for m in meta {
        let c = counts.get(m.station_id.as_str()).copied().unwrap_or_default();
        let e = maxima.entry(m.province).or_default();
        e.0 = e.0.max(c.0);
        e.1 = e.1.max(c.1);
    }
    let mut stations = Vec::with_capacity(meta.len());
    let mut retained = Vec::new();
    for m in meta {
        let (t, p) = counts.get(m.station_id.as_str()).copied().unwrap_or_default();
        let (mt, mp) = maxima[&m.province];
        let keep = mt > 0 && mp > 0 && rule.admits(t, mt) && rule.admits(p, mp);
        if keep {
            retained.push(m.clone());
        }
        stations.push(StationCoverage {
            station_id: m.station_id.clone(),
            province: m.province,
            temp_months: t,
            precip_months: p,
            retained: keep,
        });
    }
    let empty: Vec<String> = maxima
        .iter()
        .filter(|(p, _)| !retained.iter().any(|m| m.province == **p))
        .map(|(p, (mt, mp))| format!("{p} (max complete months: temp {mt}, precip {mp})"))
        .collect();
    if !empty.is_empty() {
        return Err(data_err(format!(
            "no station passes coverage screening in {}",
            empty.join(", ")
        )));
    }
    Ok(CoverageResult { retained, stations, maxima })
}

// ---------------------------------------------------------------------------
// Economic tables
// ---------------------------------------------------------------------------

fn collect_errors(errors: Vec<String>, path: &Path) -> Result<()> {
    if errors.is_empty() {
        return Ok(());
    }
    let n = errors.len();
    let shown: Vec<_> = errors.into_iter().take(10).collect();
    Err(data_err(format!("{}: {n} problem(s): {}", path.display(), shown.join("; "))))
}

fn year_gaps<K: Ord + std::fmt::Debug>(years: BTreeMap<K, BTreeSet<i32>>) -> Vec<String> {
    let mut out = Vec::new();
    for (k, ys) in years {
        let (lo, hi) = (*ys.first().unwrap(), *ys.last().unwrap());
        let missing: Vec<i32> = (lo..=hi).filter(|y| !ys.contains(y)).collect();
        if !missing.is_empty() {
            out.push(format!("{k:?} missing years {missing:?}"));
        }
    }
    out
}

pub fn load_econ(path: &Path, schema: &Schema) -> Result<EconTable> {
    let t = Table::read(path, schema.delimiter)?;
    let s = &schema.econ;
    let (cp, cy, cs, cg, cpop) = (
        t.col(&s.province, path)?,
        t.col(&s.year, path)?,
        t.col(&s.sector, path)?,
        t.col(&s.gdp_chained, path)?,
        t.col(&s.population, path)?,
    );
    let mut rows = Vec::with_capacity(t.rows.len());
    let mut errors = Vec::new();
    let mut keys = BTreeSet::new();
    let mut years: BTreeMap<(Province, String), BTreeSet<i32>> = BTreeMap::new();
    for (i, rec) in t.rows.iter().enumerate() {
        let parsed = (|| -> std::result::Result<EconRow, String> {
            let province: Province =
                field(rec, cp).parse().map_err(|e: Error| e.to_string())?;
            let year = parse_int(field(rec, cy), "year")?;
            let sector = field(rec, cs).to_string();
            if sector.is_empty() {
                return Err("empty sector".into());
            }
            let gdp_chained = parse_num(field(rec, cg), "gdp_chained")?;
            let population = parse_num(field(rec, cpop), "population")?;
            if gdp_chained <= 0.0 || population <= 0.0 {
                return Err("gdp_chained and population must be positive".into());
            }
            Ok(EconRow { province, year, sector, gdp_chained, population })
        })();
        match parsed {
            Ok(r) => {
                if !keys.insert((r.province, r.year, r.sector.clone())) {
                    errors.push(format!(
                        "duplicate key ({}, {}, {})",
                        r.province, r.year, r.sector
                    ));
                    continue;
                }
                years.entry((r.province, r.sector.clone())).or_default().insert(r.year);
                rows.push(r);
            }
            Err(m) => errors.push(format!("row {}: {m}", i + 1)),
        }
    }
    errors.extend(year_gaps(years));
    collect_errors(errors, path)?;
    Ok(EconTable { rows })
}

pub fn load_indices(path: &Path, schema: &Schema) -> Result<IndexSeries> {
    let t = Table::read(path, schema.delimiter)?;
    let s = &schema.indices;
    let (cn, cy, cv) = (t.col(&s.name, path)?, t.col(&s.year, path)?, t.col(&s.value, path)?);
    let cp = t.opt_col(&s.province);
    let mut obs = Vec::new();
    let mut errors = Vec::new();
    let mut keys = BTreeSet::new();
    let mut years: BTreeMap<(IndexName, Option<Province>), BTreeSet<i32>> = BTreeMap::new();
    for (i, rec) in t.rows.iter().enumerate() {
        let parsed = (|| -> std::result::Result<IndexObs, String> {
            let name: IndexName = field(rec, cn).parse().map_err(|e: Error| e.to_string())?;
            let prov_s = cp.map(|c| field(rec, c)).unwrap_or("");
            let province = if is_missing(prov_s) {
                None
            } else {
                Some(prov_s.parse::<Province>().map_err(|e| e.to_string())?)
            };
            match (name.is_provincial(), province) {
                (true, None) => return Err(format!("{} requires a province", name.as_str())),
                (false, Some(_)) => {
                    return Err(format!("{} is a national series", name.as_str()))
                }
                _ => {}
            }
            let year = parse_int(field(rec, cy), "year")?;
            let value = parse_num(field(rec, cv), "value")?;
            Ok(IndexObs { name, province, year, value })
        })();
        match parsed {
            Ok(o) => {
                if !keys.insert((o.name, o.province, o.year)) {
                    errors.push(format!(
                        "duplicate key ({}, {:?}, {})",
                        o.name.as_str(),
                        o.province,
                        o.year
                    ));
                    continue;
                }
                years.entry((o.name, o.province)).or_default().insert(o.year);
                obs.push(o);
            }
            Err(m) => errors.push(format!("row {}: {m}", i + 1)),
        }
    }
    errors.extend(year_gaps(years));
    collect_errors(errors, path)?;
    Ok(IndexSeries { obs })
}

/// Parses a province list such as `All`, `ON;QC` or `ON, QC`.
pub fn parse_province_set(s: &str) -> Result<BTreeSet<Province>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(Province::ALL.into_iter().collect());
    }
    let set = s
        .split(|c| c == ';' || c == ',' || c == '|')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect::<Result<BTreeSet<Province>>>()?;
    if set.is_empty() {
        return Err(data_err("empty province list"));
    }
    Ok(set)
}

pub fn load_events(path: &Path, schema: &Schema) -> Result<Vec<EventRecord>> {
    let t = Table::read(path, schema.delimiter)?;
    let s = &schema.events;
    let (ci, cl, cy, cm, cp) = (
        t.col(&s.event_id, path)?,
        t.col(&s.label, path)?,
        t.col(&s.year, path)?,
        t.col(&s.month, path)?,
        t.col(&s.provinces, path)?,
    );
    let mut out: Vec<EventRecord> = Vec::new();
    let mut errors = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, rec) in t.rows.iter().enumerate() {
        let parsed = (|| -> std::result::Result<EventRecord, String> {
            let event_id: u32 = parse_int(field(rec, ci), "event_id")?;
            let year = parse_int(field(rec, cy), "year")?;
            let month: u32 = parse_int(field(rec, cm), "month")?;
            if !(1..=12).contains(&month) {
                return Err(format!("month {month} outside 1-12"));
            }
            let provinces_affected =
                parse_province_set(field(rec, cp)).map_err(|e| e.to_string())?;
            Ok(EventRecord {
                event_id,
                label: field(rec, cl).to_string(),
                year,
                month,
                provinces_affected,
            })
        })();
        match parsed {
            Ok(e) if !ids.insert(e.event_id) => {
                errors.push(format!("duplicate event_id {}", e.event_id))
            }
            Ok(e) => out.push(e),
            Err(m) => errors.push(format!("row {}: {m}", i + 1)),
        }
    }
    collect_errors(errors, path)?;
    Ok(out)
}

pub fn load_rcp(path: &Path, schema: &Schema) -> Result<RcpDeltaTable> {
    let t = Table::read(path, schema.delimiter)?;
    let s = &schema.rcp;
    let (cs, cp, cse, ch, ct, cpr) = (
        t.col(&s.scenario, path)?,
        t.col(&s.province, path)?,
        t.col(&s.season, path)?,
        t.col(&s.horizon, path)?,
        t.col(&s.temp_delta, path)?,
        t.col(&s.precip_delta, path)?,
    );
    let mut table = RcpDeltaTable::default();
    let mut errors = Vec::new();
    for (i, rec) in t.rows.iter().enumerate() {
        let parsed = (|| -> Result<_> {
            let key = (
                field(rec, cs).parse::<Scenario>()?,
                field(rec, cp).parse::<Province>()?,
                field(rec, cse).parse::<Season>()?,
                field(rec, ch).parse::<Horizon>()?,
            );
            let d = RcpDelta {
                temp_delta: parse_num(field(rec, ct), "temp_delta").map_err(data_err)?,
                precip_delta: parse_num(field(rec, cpr), "precip_delta").map_err(data_err)?,
            };
            Ok((key, d))
        })();
        match parsed {
            Ok((key, d)) => {
                if table.cells.insert(key, d).is_some() {
                    errors.push(format!("duplicate key {key:?}"));
                }
            }
            Err(e) => errors.push(format!("row {}: {e}", i + 1)),
        }
    }
    collect_errors(errors, path)?;
    table.validate()?;
    Ok(table)
}

/// The bundled list of major economic events (38 entries, 1997-2017).
pub fn bundled_events() -> Vec<EventRecord> {
    const CSV: &str = include_str!("../data/economic_events.csv");
    let mut rdr = csv::Reader::from_reader(CSV.as_bytes());
    rdr.records()
        .map(|r| {
            let r = r.expect("bundled event list is well-formed");
            EventRecord {
                event_id: r[0].parse().unwrap(),
                label: r[1].to_string(),
                year: r[2].parse().unwrap(),
                month: r[3].parse().unwrap(),
                provinces_affected: parse_province_set(&r[4]).unwrap(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    const STATION_HEADER: &str =
        "station_id,province,latitude,longitude,year,month,mean_temp,total_precip\n";

    #[test]
    fn duplicate_station_ids_collapse_to_one_meta() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{STATION_HEADER}S1,ON,45,-75,2000,1,-5,60\nS1,ON,45,-75,2000,2,-4,55\nS1,QC,46,-72,2000,3,1,NA\n"
        );
        let p = write_tmp(&dir, "s.csv", &body);
        let load = load_stations(&p, &Schema::default()).unwrap();
        assert_eq!(load.meta.len(), 1);
        assert_eq!(load.meta[0].province, Province::ON);
        assert_eq!(load.records.len(), 2);
        assert_eq!(load.report.dropped["duplicate_station"], 1);
    }

    #[test]
    fn out_of_range_latitude_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{STATION_HEADER}S1,ON,95.0,-75,2000,1,-5,60\nS2,ON,45,-75,2000,1,-5,\n");
        let p = write_tmp(&dir, "s.csv", &body);
        let load = load_stations(&p, &Schema::default()).unwrap();
        assert_eq!(load.records.len(), 1);
        assert_eq!(load.report.dropped["coordinates_out_of_range"], 1);
        assert_eq!(load.records[0].total_precip, None);
        assert_eq!(load.report.input_rows, load.report.retained_rows + load.report.dropped_total());
    }

    #[test]
    fn mostly_invalid_file_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{STATION_HEADER}S1,YT,45,-75,2000,1,-5,60\nS2,ON,abc,-75,2000,1,-5,60\nS3,ON,45,-75,2000,1,1,2\n"
        );
        let p = write_tmp(&dir, "s.csv", &body);
        let err = load_stations(&p, &Schema::default()).unwrap_err();
        assert!(err.to_string().contains("2 of 3 rows invalid"), "{err}");
    }

    #[test]
    fn schema_maps_columns() {
        let dir = tempfile::tempdir().unwrap();
        let body = "ID;Prov;Lat;Lon;Yr;Mo;T;P\nX;BC;49;-123;2001;7;18.5;30\n";
        let p = write_tmp(&dir, "s.csv", body);
        let mut schema = Schema { delimiter: ';', ..Default::default() };
        schema.stations.station_id = "ID".into();
        schema.stations.province = "Prov".into();
        schema.stations.latitude = "Lat".into();
        schema.stations.longitude = "Lon".into();
        schema.stations.year = "Yr".into();
        schema.stations.month = "Mo".into();
        schema.stations.mean_temp = "T".into();
        schema.stations.total_precip = "P".into();
        let load = load_stations(&p, &schema).unwrap();
        assert_eq!(load.records[0].mean_temp, Some(18.5));
        let missing = load_stations(&p, &Schema::default()).unwrap_err();
        assert!(matches!(missing, Error::Config(_)));
    }

    fn station(id: &str, months_t: usize, months_p: usize) -> (StationMeta, Vec<StationRecord>) {
        let meta = StationMeta {
            station_id: id.into(),
            province: Province::PE,
            latitude: 46.0,
            longitude: -63.0,
            subregion_id: None,
            subregion_population: None,
        };
        let n = months_t.max(months_p);
        let recs = (0..n)
            .map(|k| StationRecord {
                station_id: id.into(),
                province: Province::PE,
                latitude: 46.0,
                longitude: -63.0,
                year: 1998 + (k / 12) as i32,
                month: (k % 12) as u32 + 1,
                mean_temp: (k < months_t).then_some(1.0),
                total_precip: (k < months_p).then_some(10.0),
            })
            .collect();
        (meta, recs)
    }

    fn screen(stations: &[(usize, usize)], rule: CoverageRule) -> Vec<String> {
        let mut meta = Vec::new();
        let mut recs = Vec::new();
        for (i, &(t, p)) in stations.iter().enumerate() {
            let (m, r) = station(&format!("S{i}"), t, p);
            meta.push(m);
            recs.extend(r);
        }
        coverage_filter(&recs, &meta, 1998..=2017, rule)
            .unwrap()
            .retained
            .into_iter()
            .map(|m| m.station_id)
            .collect()
    }

    #[test]
    fn coverage_single_complete_station_retained() {
        assert_eq!(screen(&[(240, 240)], CoverageRule::default()), vec!["S0"]);
    }

    #[test]
    fn coverage_requires_both_variables() {
        // 89% of the max on temperature only.
        let kept = screen(&[(240, 240), (213, 240)], CoverageRule::default());
        assert_eq!(kept, vec!["S0"]);
    }

    #[test]
    fn coverage_threshold_arithmetic() {
        // 0.9 * 240 = 216: 230 passes, 100 fails; 216 passes exactly.
        let kept = screen(&[(240, 240), (230, 230), (100, 100)], CoverageRule::default());
        assert_eq!(kept, vec!["S0", "S1"]);
        let kept = screen(&[(240, 240), (216, 216), (215, 240)], CoverageRule::default());
        assert_eq!(kept, vec!["S0", "S1"]);
    }

    #[test]
    fn coverage_empty_province_is_fatal() {
        let (m, _) = station("S0", 0, 0);
        let err = coverage_filter(&[], &[m], 1998..=2017, CoverageRule::default()).unwrap_err();
        assert!(err.to_string().contains("PE"));
    }

    #[test]
    fn events_expand_all() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "e.csv",
            "event_id,label,year,month,provinces\n1,x,2008,9,All\n2,y,2010,2,BC\n",
        );
        let ev = load_events(&p, &Schema::default()).unwrap();
        assert_eq!(ev[0].provinces_affected.len(), 10);
        assert_eq!(ev[1].provinces_affected.len(), 1);
        let dup = write_tmp(
            &dir,
            "d.csv",
            "event_id,label,year,month,provinces\n1,x,2008,9,All\n1,y,2010,2,BC\n",
        );
        assert!(load_events(&dup, &Schema::default()).is_err());
    }

    #[test]
    fn bundled_event_list_row_15() {
        let ev = bundled_events();
        assert_eq!(ev.len(), 38);
        let lehman = ev.iter().find(|e| e.event_id == 15).unwrap();
        assert_eq!(lehman.year, 2008);
        assert_eq!(lehman.month, 9);
        assert!(lehman.label.contains("Lehman"));
        assert_eq!(lehman.provinces_affected.len(), 10);
        let ceta = ev.iter().find(|e| e.event_id == 37).unwrap();
        assert_eq!(ceta.provinces_affected.len(), 2);
    }

    #[test]
    fn rcp_missing_mid_horizon_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "r.csv",
            "scenario,province,season,horizon,temp_delta,precip_delta\n\
             RCP4.5,ON,Winter,near,1.5,3\nRCP4.5,ON,Winter,mid,2.4,5\nRCP4.5,QC,Winter,near,1.6,4\n",
        );
        let err = load_rcp(&p, &Schema::default()).unwrap_err();
        assert!(err.to_string().contains("QC/Winter lacks mid"), "{err}");
    }

    #[test]
    fn econ_rejects_duplicates_and_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = "province,year,sector,gdp_chained,population\n";
        let ok = write_tmp(&dir, "ok.csv", &format!("{hdr}ON,1997,TOTAL,100,10\nON,1998,TOTAL,110,10\n"));
        assert_eq!(load_econ(&ok, &Schema::default()).unwrap().rows.len(), 2);
        let dup = write_tmp(&dir, "dup.csv", &format!("{hdr}ON,1997,TOTAL,100,10\nON,1997,TOTAL,110,10\n"));
        assert!(load_econ(&dup, &Schema::default()).unwrap_err().to_string().contains("duplicate"));
        let gap = write_tmp(&dir, "gap.csv", &format!("{hdr}ON,1997,TOTAL,100,10\nON,1999,TOTAL,110,10\n"));
        assert!(load_econ(&gap, &Schema::default()).unwrap_err().to_string().contains("1998"));
    }

    #[test]
    fn indices_require_province_only_for_unemployment() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = "name,province,year,value\n";
        let ok = write_tmp(&dir, "ok.csv", &format!("{hdr}world_gdp,,1997,100\nunemployment,ON,1997,6.5\n"));
        assert_eq!(load_indices(&ok, &Schema::default()).unwrap().obs.len(), 2);
        let bad = write_tmp(&dir, "bad.csv", &format!("{hdr}unemployment,,1997,6.5\n"));
        assert!(load_indices(&bad, &Schema::default()).is_err());
    }
}
