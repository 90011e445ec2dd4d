//! Province-year regression panels and compilation of declarative model
//! specifications into fixed and random design matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{data_err, Error, Result};
use crate::features::{AnomalyPanel, GrowthObs, IndexGrowthObs};
use crate::ingest::{EventRecord, IndexName};
use crate::types::{ClimateKind, ClimateVar, Province, Season};

// ---------------------------------------------------------------------------
// Model specifications
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YearEffect {
    Fixed,
    None,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventEffect {
    None,
    Random,
}

/// Declarative regression specification. Province enters as a fixed effect
/// in every specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub year_effect: YearEffect,
    pub quadratics: bool,
    #[serde(alias = "interactions_TxP")]
    pub interactions: bool,
    pub province_trends: bool,
    pub province_random_slopes: bool,
    /// Regressors given province random slopes; all climate terms when empty.
    pub random_slope_terms: Vec<ClimateVar>,
    pub include_indices: bool,
    pub include_events: EventEffect,
    pub climate_terms: Vec<ClimateVar>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            year_effect: YearEffect::Fixed,
            quadratics: false,
            interactions: false,
            province_trends: false,
            province_random_slopes: false,
            random_slope_terms: Vec::new(),
            include_indices: false,
            include_events: EventEffect::None,
            climate_terms: ClimateVar::ALL.to_vec(),
        }
    }
}

pub const PRESET_NAMES: [&str; 12] =
    ["m1", "m2", "m3", "m4", "m5", "m6", "m1s", "m2s", "m3s", "m4s", "m5s", "m6s"];

impl ModelSpec {
    /// Named presets: `m1`..`m6` for the main comparison and `m1s`..`m6s`
    /// for the sensitivity variants.
    pub fn preset(name: &str) -> Result<ModelSpec> {
        let key: String = name
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        let key = key.strip_prefix('m').unwrap_or(&key).to_string();
        let base = ModelSpec::default();
        let with_indices = |year_effect| ModelSpec { year_effect, include_indices: true, ..ModelSpec::default() };
        let spec = match key.as_str() {
            "1" => base,
            "2" => ModelSpec { quadratics: true, ..base },
            "3" => with_indices(YearEffect::None),
            "4" => ModelSpec { include_events: EventEffect::Random, ..with_indices(YearEffect::None) },
            "5" => with_indices(YearEffect::Random),
            "6" => ModelSpec { include_events: EventEffect::Random, ..with_indices(YearEffect::Random) },
            "1s" => ModelSpec { include_events: EventEffect::Random, ..base },
            "2s" => ModelSpec { interactions: true, ..base },
            "3s" => ModelSpec { province_trends: true, ..base },
            "4s" => ModelSpec { province_random_slopes: true, ..base },
            "5s" => ModelSpec { interactions: true, ..with_indices(YearEffect::Random) },
            "6s" => ModelSpec { province_trends: true, ..with_indices(YearEffect::Random) },
            _ => return Err(Error::Config(format!("unknown model preset '{name}'"))),
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.year_effect == YearEffect::Fixed && self.include_indices {
            return Err(Error::Config(
                "economic indices are collinear with fixed year effects; use a random or no year effect"
                    .into(),
            ));
        }
        let terms: BTreeSet<_> = self.climate_terms.iter().collect();
        if terms.len() != self.climate_terms.len() {
            return Err(Error::Config("duplicate climate term".into()));
        }
        if self.province_random_slopes
            && self.random_slope_terms.iter().any(|v| !terms.contains(v))
        {
            return Err(Error::Config("random slope on a climate term not in the model".into()));
        }
        Ok(())
    }

    pub fn slope_terms(&self) -> Vec<ClimateVar> {
        if !self.province_random_slopes {
            Vec::new()
        } else if self.random_slope_terms.is_empty() {
            self.climate_terms.clone()
        } else {
            self.random_slope_terms.clone()
        }
    }

    /// Climate-derived fixed terms in design order.
    pub fn climate_fixed_terms(&self) -> Vec<Term> {
        let mut out: Vec<Term> = self.climate_terms.iter().map(|&v| Term::Climate(v)).collect();
        if self.quadratics {
            out.extend(self.climate_terms.iter().map(|&v| Term::Square(v)));
        }
        if self.interactions {
            for s in Season::ALL {
                if self.climate_terms.contains(&ClimateVar::temp(s))
                    && self.climate_terms.contains(&ClimateVar::precip(s))
                {
                    out.push(Term::Interaction(s));
                }
            }
        }
        out
    }

    pub fn has_random_effects(&self) -> bool {
        self.year_effect == YearEffect::Random
            || self.include_events == EventEffect::Random
            || self.province_random_slopes
    }
}

/// Accepts a preset name or an inline JSON specification.
pub fn parse_spec(s: &str) -> Result<ModelSpec> {
    let spec = if s.trim_start().starts_with('{') {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("model spec: {e}")))?
    } else {
        ModelSpec::preset(s)?
    };
    spec.validate()?;
    Ok(spec)
}

/// Semantic tag of one fixed-design column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "of", rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Province(String),
    Year(i32),
    Lag,
    Climate(ClimateVar),
    Square(ClimateVar),
    Interaction(Season),
    Index(IndexName),
    Trend(String),
}

impl Term {
    pub fn name(&self) -> String {
        match self {
            Term::Intercept => "(Intercept)".into(),
            Term::Province(p) => format!("province:{p}"),
            Term::Year(y) => format!("year:{y}"),
            Term::Lag => "lag".into(),
            Term::Climate(v) => v.label(),
            Term::Square(v) => format!("({})^2", v.label()),
            Term::Interaction(s) => {
                format!("{} x {}", ClimateVar::temp(*s).label(), ClimateVar::precip(*s).label())
            }
            Term::Index(n) => n.as_str().to_string(),
            Term::Trend(p) => format!("trend:{p}"),
        }
    }

    pub fn is_climate(&self) -> bool {
        matches!(self, Term::Climate(_) | Term::Square(_) | Term::Interaction(_))
    }

    /// Design value of a climate term from the eight design-scale anomalies
    /// (temperature in °C, precipitation as a fraction).
    pub fn climate_value(&self, climate: &[f64; 8]) -> f64 {
        match self {
            Term::Climate(v) => climate[v.index()],
            Term::Square(v) => climate[v.index()].powi(2),
            Term::Interaction(s) => {
                climate[ClimateVar::temp(*s).index()] * climate[ClimateVar::precip(*s).index()]
            }
            _ => panic!("{} is not a climate term", self.name()),
        }
    }

    /// Partial derivative of the term with respect to `var` (design scale).
    pub fn climate_derivative(&self, var: ClimateVar, climate: &[f64; 8]) -> f64 {
        match self {
            Term::Climate(v) if *v == var => 1.0,
            Term::Square(v) if *v == var => 2.0 * climate[v.index()],
            Term::Interaction(s) if *s == var.season => climate[var.partner().index()],
            _ => 0.0,
        }
    }

    /// Multiplier from design-scale coefficient to reporting units
    /// (per °C, per percentage point).
    pub fn report_scale(&self) -> f64 {
        match self {
            Term::Climate(v) => v.report_scale(),
            Term::Square(v) => v.report_scale().powi(2),
            Term::Interaction(_) => 0.01,
            _ => 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Panels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub province: Province,
    /// Grouping label; equals the province code except for duplicated
    /// provinces in bootstrap replicates.
    pub cluster: String,
    pub year: i32,
    pub pcgr: f64,
    pub pcgr_lag: f64,
    /// Temperature anomalies (°C) then precipitation anomalies (fraction),
    /// in [`ClimateVar::ALL`] order.
    pub climate: [f64; 8],
    pub indices: Vec<f64>,
    pub events: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub sector: String,
    pub rows: Vec<PanelRow>,
    pub index_names: Vec<IndexName>,
    pub event_ids: Vec<u32>,
    pub event_labels: Vec<String>,
    /// Rows skipped because a regressor or the lag was missing.
    pub dropped_rows: usize,
}

impl Panel {
    pub fn clusters(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.cluster.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn provinces(&self) -> Vec<Province> {
        let set: BTreeSet<Province> = self.rows.iter().map(|r| r.province).collect();
        set.into_iter().collect()
    }

    pub fn years(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self.rows.iter().map(|r| r.year).collect();
        set.into_iter().collect()
    }
}

/// Everything panel assembly reads.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelInputs {
    pub anomalies: AnomalyPanel,
    pub growth: Vec<GrowthObs>,
    pub index_growth: Vec<IndexGrowthObs>,
    pub events: Vec<EventRecord>,
}

/// Builds the province-year panel for one sector. Rows are sorted by
/// (province, year); a row missing its lag or any regressor required by
/// `spec` is dropped and counted.
pub fn assemble(
    inputs: &PanelInputs,
    sector: &str,
    years: RangeInclusive<i32>,
    spec: &ModelSpec,
) -> Result<Panel> {
    let growth: BTreeMap<(Province, i32), f64> = inputs
        .growth
        .iter()
        .filter(|g| g.sector == sector)
        .map(|g| ((g.province, g.year), g.pcgr))
        .collect();
    if growth.is_empty() {
        return Err(data_err(format!("no growth series for sector '{sector}'")));
    }
    let anomalies = inputs.anomalies.index();
    let idx: BTreeMap<(IndexName, Option<Province>, i32), f64> = inputs
        .index_growth
        .iter()
        .map(|o| ((o.name, o.province, o.year), o.value))
        .collect();
    let index_names: Vec<IndexName> =
        if spec.include_indices { IndexName::ALL.to_vec() } else { Vec::new() };
    let events: Vec<&EventRecord> = if spec.include_events == EventEffect::Random {
        inputs.events.iter().collect()
    } else {
        Vec::new()
    };

    let mut rows = Vec::new();
    let mut dropped = 0usize;
    for (&(province, year), &pcgr) in &growth {
        if !years.contains(&year) {
            continue;
        }
        let Some(&pcgr_lag) = growth.get(&(province, year - 1)) else {
            dropped += 1;
            continue;
        };
        let mut climate = [0.0; 8];
        let mut complete = true;
        for v in ClimateVar::ALL {
            match anomalies.get(&(province, v.season, year)) {
                Some(c) => {
                    climate[v.index()] = match v.kind {
                        ClimateKind::Temp => c.temp_anomaly,
                        ClimateKind::Precip => c.precip_anomaly / 100.0,
                    }
                }
                None if spec.climate_terms.contains(&v) => complete = false,
                None => {}
            }
        }
        let mut indices = Vec::with_capacity(index_names.len());
        for &n in &index_names {
            let key = (n, n.is_provincial().then_some(province), year);
            match idx.get(&key) {
                Some(&v) => indices.push(v),
                None => complete = false,
            }
        }
        if !complete {
            dropped += 1;
            continue;
        }
        let ev = events
            .iter()
            .map(|e| f64::from(u8::from(e.year == year && e.provinces_affected.contains(&province))))
            .collect();
        rows.push(PanelRow {
            province,
            cluster: province.code().to_string(),
            year,
            pcgr,
            pcgr_lag,
            climate,
            indices,
            events: ev,
        });
    }
    if rows.is_empty() {
        return Err(data_err(format!("empty panel for sector '{sector}'")));
    }
    if dropped > 0 {
        log::warn!("sector {sector}: {dropped} province-year rows dropped for missing values");
    }
    Ok(Panel {
        sector: sector.to_string(),
        rows,
        index_names,
        event_ids: events.iter().map(|e| e.event_id).collect(),
        event_labels: events.iter().map(|e| e.label.clone()).collect(),
        dropped_rows: dropped,
    })
}

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RandomBlock {
    pub name: String,
    pub levels: Vec<String>,
    pub z: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledDesign {
    pub spec: ModelSpec,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub terms: Vec<Term>,
    pub random: Vec<RandomBlock>,
    /// Cluster index per row into `cluster_labels`.
    pub clusters: Vec<usize>,
    pub cluster_labels: Vec<String>,
    pub reference_cluster: String,
    pub trend_origin: i32,
    pub warnings: Vec<String>,
}

impl CompiledDesign {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.terms.iter().map(Term::name).collect()
    }

    pub fn column_of(&self, term: &Term) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    /// All random blocks side by side.
    pub fn z_full(&self) -> DMatrix<f64> {
        let q: usize = self.random.iter().map(|b| b.z.ncols()).sum();
        let mut z = DMatrix::zeros(self.n(), q);
        let mut off = 0;
        for b in &self.random {
            z.columns_mut(off, b.z.ncols()).copy_from(&b.z);
            off += b.z.ncols();
        }
        z
    }

    /// Rows of each cluster.
    pub fn cluster_rows(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_labels.len()];
        for (i, &g) in self.clusters.iter().enumerate() {
            out[g].push(i);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileOptions {
    /// Province (cluster) whose dummy is omitted; alphabetically first when unset.
    pub reference_cluster: Option<String>,
    /// Time index origin for province trends.
    pub trend_origin: i32,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions { reference_cluster: None, trend_origin: 1998 }
    }
}

/// Compiles `panel` under `spec` into response, fixed design, random blocks
/// and cluster labels.
///
/// Fixed columns: intercept, cluster dummies, year dummies (fixed year
/// effect), lag, climate terms (+ squares, + same-season T×P), indices and
/// cluster trends. Trends omit the reference cluster when year effects are
/// fixed, since their sum is spanned by the year dummies.
pub fn compile(panel: &Panel, spec: &ModelSpec, opts: &CompileOptions) -> Result<CompiledDesign> {
    spec.validate()?;
    let n = panel.rows.len();
    let cluster_labels = panel.clusters();
    let reference = match &opts.reference_cluster {
        Some(r) if cluster_labels.contains(r) => r.clone(),
        Some(r) => return Err(Error::Config(format!("reference cluster '{r}' not in panel"))),
        None => cluster_labels[0].clone(),
    };
    let cluster_pos: BTreeMap<&str, usize> =
        cluster_labels.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let clusters: Vec<usize> = panel.rows.iter().map(|r| cluster_pos[r.cluster.as_str()]).collect();
    let years = panel.years();

    let mut terms = vec![Term::Intercept];
    terms.extend(cluster_labels.iter().filter(|c| **c != reference).map(|c| Term::Province(c.clone())));
    if spec.year_effect == YearEffect::Fixed {
        terms.extend(years.iter().skip(1).map(|&y| Term::Year(y)));
    }
    terms.push(Term::Lag);
    terms.extend(spec.climate_fixed_terms());
    terms.extend(panel.index_names.iter().map(|&n| Term::Index(n)));
    if spec.province_trends {
        terms.extend(
            cluster_labels
                .iter()
                .filter(|c| spec.year_effect != YearEffect::Fixed || **c != reference)
                .map(|c| Term::Trend(c.clone())),
        );
    }

    let mut x = DMatrix::zeros(n, terms.len());
    for (i, r) in panel.rows.iter().enumerate() {
        for (j, t) in terms.iter().enumerate() {
            x[(i, j)] = match t {
                Term::Intercept => 1.0,
                Term::Province(c) => f64::from(u8::from(r.cluster == *c)),
                Term::Year(y) => f64::from(u8::from(r.year == *y)),
                Term::Lag => r.pcgr_lag,
                Term::Index(name) => {
                    let k = panel.index_names.iter().position(|m| m == name).unwrap();
                    r.indices[k]
                }
                Term::Trend(c) => {
                    if r.cluster == *c {
                        f64::from(r.year - opts.trend_origin)
                    } else {
                        0.0
                    }
                }
                climate => climate.climate_value(&r.climate),
            };
        }
    }
    let collinear = collinear_columns(&x);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient {
            columns: collinear.iter().map(|&j| terms[j].name()).collect(),
        });
    }

    let mut warnings = Vec::new();
    let mut random = Vec::new();
    if spec.year_effect == YearEffect::Random {
        let z = DMatrix::from_fn(n, years.len(), |i, j| {
            f64::from(u8::from(panel.rows[i].year == years[j]))
        });
        random.push(RandomBlock {
            name: "year".into(),
            levels: years.iter().map(|y| y.to_string()).collect(),
            z,
        });
    }
    if spec.include_events == EventEffect::Random {
        let keep: Vec<usize> = (0..panel.event_ids.len())
            .filter(|&k| panel.rows.iter().any(|r| r.events[k] != 0.0))
            .collect();
        let skipped = panel.event_ids.len() - keep.len();
        if skipped > 0 {
            warnings.push(format!("{skipped} event indicator(s) never active in the panel were dropped"));
        }
        if keep.is_empty() {
            warnings.push("event block is all zeros and was dropped".into());
        } else {
            let z = DMatrix::from_fn(n, keep.len(), |i, j| panel.rows[i].events[keep[j]]);
            random.push(RandomBlock {
                name: "events".into(),
                levels: keep.iter().map(|&k| format!("event:{}", panel.event_ids[k])).collect(),
                z,
            });
        }
    }
    for v in spec.slope_terms() {
        let z = DMatrix::from_fn(n, cluster_labels.len(), |i, g| {
            if clusters[i] == g {
                panel.rows[i].climate[v.index()]
            } else {
                0.0
            }
        });
        if z.iter().all(|&e| e == 0.0) {
            warnings.push(format!("random slope block for {v} is all zeros and was dropped"));
            continue;
        }
        random.push(RandomBlock {
            name: format!("slope:{}", v.label()),
            levels: cluster_labels.clone(),
            z,
        });
    }
    for w in &warnings {
        log::info!("{w}");
    }

    Ok(CompiledDesign {
        spec: spec.clone(),
        y: DVector::from_iterator(n, panel.rows.iter().map(|r| r.pcgr)),
        x,
        terms,
        random,
        clusters,
        cluster_labels,
        reference_cluster: reference,
        trend_origin: opts.trend_origin,
        warnings,
    })
}

/// Indices of columns lying (numerically) in the span of the preceding
/// columns, by twice-applied modified Gram-Schmidt.
pub fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm0 = col.norm();
        if norm0 == 0.0 {
            out.push(j);
            continue;
        }
        let mut v = col;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= 1e-9 * norm0 {
            out.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_and_guard() {
        for name in PRESET_NAMES {
            let spec = ModelSpec::preset(name).unwrap();
            spec.validate().unwrap();
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(parse_spec(&json).unwrap(), spec);
        }
        assert_eq!(ModelSpec::preset("(5)").unwrap(), ModelSpec::preset("m5").unwrap());
        assert_eq!(ModelSpec::preset("4S").unwrap(), ModelSpec::preset("m4s").unwrap());
        let bad = ModelSpec { include_indices: true, ..ModelSpec::default() };
        assert!(bad.validate().is_err());
        assert!(ModelSpec::preset("m7").is_err());
    }

    #[test]
    fn preset_shapes() {
        let m2 = ModelSpec::preset("m2").unwrap();
        assert_eq!(m2.climate_fixed_terms().len(), 16);
        let m2s = ModelSpec::preset("m2s").unwrap();
        assert_eq!(m2s.climate_fixed_terms().len(), 12);
        assert!(!ModelSpec::preset("m1").unwrap().has_random_effects());
        assert!(ModelSpec::preset("m4s").unwrap().has_random_effects());
        assert_eq!(ModelSpec::preset("m4s").unwrap().slope_terms().len(), 8);
    }

    #[test]
    fn derivatives_of_terms() {
        let mut c = [0.0; 8];
        c[3] = 2.0; // winter temp
        c[7] = 0.5; // winter precip fraction
        let wt = ClimateVar::temp(Season::Winter);
        let wp = ClimateVar::precip(Season::Winter);
        assert_eq!(Term::Square(wt).climate_derivative(wt, &c), 4.0);
        assert_eq!(Term::Interaction(Season::Winter).climate_derivative(wt, &c), 0.5);
        assert_eq!(Term::Interaction(Season::Winter).climate_derivative(wp, &c), 2.0);
        assert_eq!(Term::Interaction(Season::Winter).climate_value(&c), 1.0);
        assert_eq!(Term::Climate(wp).climate_derivative(wt, &c), 0.0);
    }

    #[test]
    fn collinearity_detection_names_columns() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        assert_eq!(collinear_columns(&x), vec![2]);
    }
}
