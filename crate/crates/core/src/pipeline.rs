//! Stage orchestration: run configuration, per-stage entry points and the
//! cached end-to-end run.
//!
//! Every stage writes into its own directory together with a JSON manifest
//! that records the validated configuration, a cache key derived from the
//! stage's inputs and the content hash of each output. A stage whose key
//! and outputs still match is skipped on rerun; a failing stage leaves a
//! `FAILED` marker next to whatever it had written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boot::{block_bootstrap, BootstrapRun, BootstrapSettings};
use crate::error::{Error, Result};
use crate::estimate::{fit, FitResult};
use crate::features::{anomaly_panel, index_growth, pcgr, seasonalize, Weighting, WinterConvention};
use crate::infer::{all_margins, cr2_vcov, margins_rows, report_table, AmeAveraging, MarginalEffect, RobustVcov};
use crate::ingest::{
    bundled_events, coverage_filter, load_econ, load_events, load_indices, load_rcp, load_stations, CoverageRule,
    Schema,
};
use crate::panel::{assemble, compile, parse_spec, CompileOptions, CompiledDesign, ModelSpec, Panel};
use crate::project::{extrapolate_climate, plot_tables, project_all, trajectory_rows, Anchoring, ScenarioPath};
use crate::store::{self, load_stage1, load_stage2, Manifest, Stage1, Stage2};
use crate::textio::{hash_file, read_json, sha256_hex, write_json, write_table};
use crate::types::Scenario;

pub const FAILED_MARKER: &str = "FAILED";
pub const STAGE_MANIFEST: &str = "manifest.json";

/// Paths of the raw inputs to the ingest stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawPaths {
    pub stations: PathBuf,
    pub econ: PathBuf,
    pub indices: PathBuf,
    /// The bundled event list is used when unset.
    pub events: Option<PathBuf>,
    pub rcp: PathBuf,
}

/// A model to fit: a preset name or a named inline specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecEntry {
    Preset(String),
    Inline { name: String, spec: ModelSpec },
}

impl SpecEntry {
    pub fn resolve(&self) -> Result<(String, ModelSpec)> {
        match self {
            SpecEntry::Preset(name) => Ok((name.trim().to_ascii_lowercase(), parse_spec(name)?)),
            SpecEntry::Inline { name, spec } => {
                spec.validate()?;
                Ok((name.clone(), spec.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: RawPaths,
    pub schema: Schema,
    pub coverage: CoverageRule,
    /// Years over which station coverage is counted; the baseline when unset.
    pub coverage_period: Option<(i32, i32)>,
    pub baseline: (i32, i32),
    pub weighting: Weighting,
    pub winter: WinterConvention,
    pub sector: String,
    /// Panel years; the baseline when unset.
    pub years: Option<(i32, i32)>,
    pub specs: Vec<SpecEntry>,
    /// Model used for projection and bootstrap; lowest BIC when unset.
    pub projection_spec: Option<String>,
    pub averaging: AmeAveraging,
    pub scenarios: Vec<Scenario>,
    pub anchoring: Anchoring,
    pub horizon: i32,
    pub plotdata: bool,
    /// Zero replicates skips the bootstrap stage.
    pub bootstrap: BootstrapSettings,
    pub bootstrap_coefficients: bool,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inputs: RawPaths::default(),
            schema: Schema::default(),
            coverage: CoverageRule::default(),
            coverage_period: None,
            baseline: (1998, 2017),
            weighting: Weighting::Unweighted,
            winter: WinterConvention::PrecedingDecember,
            sector: "TOTAL".into(),
            years: None,
            specs: ["m1", "m2", "m3", "m4", "m5", "m6"].map(|s| SpecEntry::Preset(s.into())).to_vec(),
            projection_spec: None,
            averaging: AmeAveraging::Pooled,
            scenarios: Scenario::ALL.to_vec(),
            anchoring: Anchoring::Endpoint,
            horizon: crate::project::DEFAULT_HORIZON,
            plotdata: true,
            bootstrap: BootstrapSettings::default(),
            bootstrap_coefficients: false,
            output: PathBuf::from("out"),
        }
    }
}

fn check_range(what: &str, (a, b): (i32, i32)) -> Result<()> {
    if a > b {
        return Err(Error::Config(format!("{what} range {a}:{b} is empty")));
    }
    Ok(())
}

/// Parses `1998:2017` (or `1998-2017`).
pub fn parse_year_range(s: &str) -> Result<(i32, i32)> {
    let (a, b) = s
        .split_once([':', '-'])
        .ok_or_else(|| Error::Config(format!("year range '{s}' must look like 1998:2017")))?;
    let parse = |t: &str| t.trim().parse::<i32>().map_err(|_| Error::Config(format!("bad year '{t}'")));
    let r = (parse(a)?, parse(b)?);
    check_range("year", r)?;
    Ok(r)
}

impl RunConfig {
    /// Reads a JSON config; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.inputs.stations);
        fix(&mut cfg.inputs.econ);
        fix(&mut cfg.inputs.indices);
        fix(&mut cfg.inputs.rcp);
        if let Some(e) = cfg.inputs.events.as_mut() {
            fix(e);
        }
        fix(&mut cfg.output);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_range("baseline", self.baseline)?;
        check_range("panel year", self.panel_years())?;
        check_range("coverage", self.coverage_years())?;
        if self.coverage.denominator == 0 || self.coverage.numerator > self.coverage.denominator {
            return Err(Error::Config("coverage rule must be a fraction in [0, 1]".into()));
        }
        if self.sector.trim().is_empty() {
            return Err(Error::Config("sector is empty".into()));
        }
        let specs = self.resolved_specs()?;
        if specs.is_empty() {
            return Err(Error::Config("no model specifications requested".into()));
        }
        let mut names: Vec<&str> = specs.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("model names must be unique".into()));
        }
        if let Some(p) = &self.projection_spec {
            if !specs.iter().any(|(n, _)| n == &p.to_ascii_lowercase()) {
                return Err(Error::Config(format!("projection spec '{p}' is not among the fitted models")));
            }
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios requested".into()));
        }
        if self.horizon < crate::project::FIRST_PROJECTED_YEAR {
            return Err(Error::Config(format!("horizon {} precedes the first projected year", self.horizon)));
        }
        if self.bootstrap.threads == 0 {
            return Err(Error::Config("bootstrap threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn validate_inputs(&self) -> Result<()> {
        let i = &self.inputs;
        for (name, p) in [("stations", &i.stations), ("econ", &i.econ), ("indices", &i.indices), ("rcp", &i.rcp)] {
            if p.as_os_str().is_empty() {
                return Err(Error::Config(format!("input path '{name}' is not set")));
            }
        }
        Ok(())
    }

    pub fn panel_years(&self) -> (i32, i32) {
        self.years.unwrap_or(self.baseline)
    }

    pub fn coverage_years(&self) -> (i32, i32) {
        self.coverage_period.unwrap_or(self.baseline)
    }

    pub fn resolved_specs(&self) -> Result<Vec<(String, ModelSpec)>> {
        self.specs.iter().map(SpecEntry::resolve).collect()
    }

    fn bootstrap_settings(&self) -> BootstrapSettings {
        BootstrapSettings { baseline_years: self.baseline, horizon: self.horizon, ..self.bootstrap.clone() }
    }
}

// ---------------------------------------------------------------------------
// Stage bookkeeping
// ---------------------------------------------------------------------------

fn stage_key(stage: &str, parts: &impl Serialize) -> Result<String> {
    let text = serde_json::to_string(&(stage, parts))?;
    Ok(sha256_hex(text.as_bytes()))
}

/// A previous run's manifest when its key matches and every listed output
/// still carries the recorded hash.
fn cached(dir: &Path, manifest_name: &str, key: &str) -> Option<Manifest> {
    let m: Manifest = read_json(&dir.join(manifest_name)).ok()?;
    if m.key != key || dir.join(FAILED_MARKER).exists() {
        return None;
    }
    for (name, entry) in &m.tables {
        if hash_file(&dir.join(name)).ok()? != entry.sha256 {
            return None;
        }
    }
    Some(m)
}

/// Result of one stage: its manifest and whether it actually ran.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub manifest: Manifest,
    pub ran: bool,
}

fn run_stage(
    dir: &Path,
    manifest_name: &str,
    mut manifest: Manifest,
    force: bool,
    body: impl FnOnce(&mut Manifest) -> Result<()>,
) -> Result<StageOutcome> {
    if !force {
        if let Some(m) = cached(dir, manifest_name, &manifest.key) {
            log::info!("{}: up to date, skipped", manifest.stage);
            return Ok(StageOutcome { manifest: m, ran: false });
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let marker = dir.join(FAILED_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    log::info!("{}: running", manifest.stage);
    match body(&mut manifest).and_then(|_| write_json(&dir.join(manifest_name), &manifest)) {
        Ok(_) => Ok(StageOutcome { manifest, ran: true }),
        Err(e) => {
            let _ = std::fs::write(&marker, format!("stage {} failed: {e}\n", manifest.stage));
            Err(e)
        }
    }
}

/// Runs a single stage outside `run_all`: always recomputes and writes its
/// manifest as `manifest_name` in `dir`.
pub fn run_standalone(
    dir: &Path,
    manifest_name: &str,
    stage: &str,
    config: serde_json::Value,
    body: impl FnOnce(&mut Manifest) -> Result<()>,
) -> Result<Manifest> {
    let m = Manifest::new(stage, config);
    run_stage(dir, manifest_name, m, true, body).map(|o| o.manifest)
}

fn record_table(m: &mut Manifest, dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let h = write_table(&dir.join(name), header, rows)?;
    m.add(name, rows.len(), h);
    Ok(())
}

fn record_json<T: Serialize>(m: &mut Manifest, dir: &Path, name: &str, value: &T) -> Result<()> {
    let h = write_json(&dir.join(name), value)?;
    m.add(name, 1, h);
    Ok(())
}

fn config_value(cfg: &RunConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(cfg)?)
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Loads, validates and screens the raw inputs.
pub fn ingest(cfg: &RunConfig) -> Result<(Stage1, Vec<crate::ingest::LoadReport>)> {
    cfg.validate_inputs()?;
    let s = &cfg.schema;
    let stations = load_stations(&cfg.inputs.stations, s)?;
    let (a, b) = cfg.coverage_years();
    let coverage = coverage_filter(&stations.records, &stations.meta, a..=b, cfg.coverage)?;
    let events = match &cfg.inputs.events {
        Some(p) => load_events(p, s)?,
        None => bundled_events(),
    };
    let report = stations.report.clone();
    let stage = Stage1 {
        coverage,
        econ: load_econ(&cfg.inputs.econ, s)?,
        indices: load_indices(&cfg.inputs.indices, s)?,
        events,
        rcp: load_rcp(&cfg.inputs.rcp, s)?,
        stations,
    };
    Ok((stage, vec![report]))
}

fn input_hashes(cfg: &RunConfig) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let i = &cfg.inputs;
    for (name, p) in [("stations", &i.stations), ("econ", &i.econ), ("indices", &i.indices), ("rcp", &i.rcp)] {
        out.insert(name.to_string(), hash_file(p)?);
    }
    if let Some(p) = &i.events {
        out.insert("events".into(), hash_file(p)?);
    }
    Ok(out)
}

pub fn ingest_stage(cfg: &RunConfig, store_dir: &Path, force: bool) -> Result<StageOutcome> {
    cfg.validate_inputs()?;
    let inputs = input_hashes(cfg)?;
    let section = (&inputs, &cfg.schema, cfg.coverage, cfg.coverage_years());
    let mut m = Manifest::new("ingest", config_value(cfg)?);
    m.key = stage_key("ingest", &section)?;
    m.inputs = inputs;
    run_stage(store_dir, store::INGEST_MANIFEST, m, force, |m| {
        let (stage, reports) = ingest(cfg)?;
        for r in &reports {
            store::record_report(m, r);
        }
        store::write_stage1(store_dir, &stage, m)
    })
}

/// Seasonal climate, anomalies, growth rates and index transforms from the
/// cleaned inputs.
pub fn features(cfg: &RunConfig, s1: &Stage1) -> Result<(crate::features::SeasonalClimate, crate::panel::PanelInputs)> {
    let sc = seasonalize(&s1.stations.records, &s1.coverage.retained, cfg.weighting, cfg.winter)?;
    if !sc.incomplete.is_empty() {
        log::warn!("{} seasonal cells lack a contributing station and were left out", sc.incomplete.len());
    }
    let anomalies = anomaly_panel(&sc, cfg.baseline.0..=cfg.baseline.1, cfg.weighting)?;
    let inputs = crate::panel::PanelInputs {
        anomalies,
        growth: pcgr(&s1.econ)?,
        index_growth: index_growth(&s1.indices)?,
        events: s1.events.clone(),
    };
    Ok((sc, inputs))
}

pub fn features_stage(cfg: &RunConfig, store_dir: &Path, force: bool) -> Result<StageOutcome> {
    let upstream: Manifest = read_json(&store_dir.join(store::INGEST_MANIFEST))?;
    let section = (upstream.output_hash(), cfg.baseline, cfg.weighting, cfg.winter);
    let mut m = Manifest::new("features", config_value(cfg)?);
    m.key = stage_key("features", &section)?;
    m.inputs.insert("ingest".into(), upstream.output_hash());
    m.notes.push(format!("winter convention: {:?}", cfg.winter));
    run_stage(store_dir, store::FEATURES_MANIFEST, m, force, |m| {
        let s1 = load_stage1(store_dir)?;
        let (sc, inputs) = features(cfg, &s1)?;
        store::write_stage2(store_dir, Some(&sc), &inputs, &s1.rcp, m)
    })
}

/// Saved estimation result with the specification and input hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub name: String,
    pub sector: String,
    pub years: (i32, i32),
    pub spec: ModelSpec,
    /// Content hashes of the feature tables the fit read.
    pub inputs: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    pub fit: FitResult,
}

/// Panel and compiled design of one model.
pub fn design_for(s2: &Stage2, sector: &str, years: (i32, i32), spec: &ModelSpec) -> Result<(Panel, CompiledDesign)> {
    let panel = assemble(&s2.inputs, sector, years.0..=years.1, spec)?;
    let design = compile(&panel, spec, &CompileOptions::default())?;
    Ok((panel, design))
}

pub fn fit_model(s2: &Stage2, name: &str, spec: &ModelSpec, sector: &str, years: (i32, i32)) -> Result<FitRecord> {
    let (_, design) = design_for(s2, sector, years, spec)?;
    let f = fit(&design)?;
    if !f.converged {
        log::warn!("{name}: variance-component search hit the sweep limit");
    }
    Ok(FitRecord {
        name: name.to_string(),
        sector: sector.to_string(),
        years,
        spec: spec.clone(),
        inputs: s2.manifest.tables.iter().map(|(k, v)| (k.clone(), v.sha256.clone())).collect(),
        warnings: design.warnings.clone(),
        fit: f,
    })
}

pub fn fit_file_name(name: &str) -> String {
    let safe: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    format!("fit_{safe}.json")
}

pub fn fit_stage(cfg: &RunConfig, store_dir: &Path, dir: &Path, force: bool) -> Result<StageOutcome> {
    let upstream: Manifest = read_json(&store_dir.join(store::FEATURES_MANIFEST))?;
    let specs = cfg.resolved_specs()?;
    let section = (upstream.output_hash(), &specs, &cfg.sector, cfg.panel_years());
    let mut m = Manifest::new("fit", config_value(cfg)?);
    m.key = stage_key("fit", &section)?;
    m.inputs.insert("features".into(), upstream.output_hash());
    run_stage(dir, STAGE_MANIFEST, m, force, |m| {
        let s2 = load_stage2(store_dir)?;
        for (name, spec) in &specs {
            let rec = fit_model(&s2, name, spec, &cfg.sector, cfg.panel_years())?;
            record_json(m, dir, &fit_file_name(name), &rec)?;
        }
        Ok(())
    })
}

pub fn load_fits(dir: &Path, names: &[String]) -> Result<Vec<FitRecord>> {
    names.iter().map(|n| read_json(&dir.join(fit_file_name(n)))).collect()
}

/// Robust covariance and marginal effects of one saved fit.
pub fn infer_fit(s2: &Stage2, rec: &FitRecord, averaging: AmeAveraging) -> Result<(RobustVcov, Vec<MarginalEffect>)> {
    let (panel, design) = design_for(s2, &rec.sector, rec.years, &rec.spec)?;
    if design.column_names() != rec.fit.column_names {
        return Err(Error::Data(format!("{}: design columns differ from the saved fit", rec.name)));
    }
    let (robust, parts) = cr2_vcov(&rec.fit, &design)?;
    let margins = all_margins(&rec.fit, &robust, &parts, &panel, averaging)?;
    Ok((robust, margins))
}

/// Writes the coefficient comparison table, the margins table and one
/// robust covariance record per fit.
pub fn write_inference(
    s2: &Stage2,
    fits: &[FitRecord],
    averaging: AmeAveraging,
    dir: &Path,
    names: (&str, &str),
    m: &mut Manifest,
) -> Result<()> {
    let mut robust = Vec::new();
    let mut margin_rows = Vec::new();
    let mut margin_header = Vec::new();
    for rec in fits {
        let (r, margins) = infer_fit(s2, rec, averaging)?;
        for w in &r.warnings {
            log::debug!("{}: {w}", rec.name);
        }
        let (h, rows) = margins_rows(&margins);
        margin_header = std::iter::once("model").chain(h).collect::<Vec<_>>();
        margin_rows.extend(rows.into_iter().map(|row| std::iter::once(rec.name.clone()).chain(row).collect::<Vec<_>>()));
        record_json(m, dir, &format!("robust_{}", fit_file_name(&rec.name).trim_start_matches("fit_")), &r)?;
        robust.push(r);
    }
    let entries: Vec<(String, &FitResult, &RobustVcov)> =
        fits.iter().zip(&robust).map(|(f, r)| (f.name.clone(), &f.fit, r)).collect();
    let table = report_table(&entries);
    let (header, rows) = table.to_rows();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    record_table(m, dir, names.0, &header, &rows)?;
    if margin_header.is_empty() {
        margin_header = vec!["model"];
    }
    record_table(m, dir, names.1, &margin_header, &margin_rows)?;
    if let Some(best) = &table.best_bic {
        m.notes.push(format!("lowest BIC: {best}"));
    }
    m.notes.push("AIC/BIC use the maximum (not restricted) likelihood".into());
    Ok(())
}

pub fn infer_stage(cfg: &RunConfig, store_dir: &Path, fit_dir: &Path, dir: &Path, force: bool) -> Result<StageOutcome> {
    let upstream: Manifest = read_json(&fit_dir.join(STAGE_MANIFEST))?;
    let features: Manifest = read_json(&store_dir.join(store::FEATURES_MANIFEST))?;
    let section = (upstream.output_hash(), features.output_hash(), cfg.averaging);
    let mut m = Manifest::new("infer", config_value(cfg)?);
    m.key = stage_key("infer", &section)?;
    m.inputs.insert("fit".into(), upstream.output_hash());
    run_stage(dir, STAGE_MANIFEST, m, force, |m| {
        let s2 = load_stage2(store_dir)?;
        let names: Vec<String> = cfg.resolved_specs()?.into_iter().map(|(n, _)| n).collect();
        let fits = load_fits(fit_dir, &names)?;
        write_inference(&s2, &fits, cfg.averaging, dir, ("table.csv", "margins.csv"), m)
    })
}

/// The configured projection model, or the fit with the lowest BIC.
pub fn projection_fit(cfg: &RunConfig, fits: &[FitRecord]) -> Result<FitRecord> {
    let chosen = match &cfg.projection_spec {
        Some(name) => fits.iter().find(|f| f.name == name.to_ascii_lowercase()),
        None => fits.iter().filter(|f| f.fit.bic.is_finite()).min_by(|a, b| a.fit.bic.total_cmp(&b.fit.bic)),
    };
    chosen.cloned().ok_or_else(|| Error::Config("no usable fit for projection".into()))
}

/// Scenario paths and trajectories of one fit.
pub fn project_fit(
    s2: &Stage2,
    rec: &FitRecord,
    scenarios: &[Scenario],
    anchoring: Anchoring,
    baseline: (i32, i32),
    horizon: i32,
) -> Result<(Vec<ScenarioPath>, Vec<crate::project::Trajectory>)> {
    let panel = assemble(&s2.inputs, &rec.sector, rec.years.0..=rec.years.1, &rec.spec)?;
    let mut paths = Vec::new();
    let mut trajs = Vec::new();
    for &scenario in scenarios {
        let path = extrapolate_climate(&s2.rcp, &s2.inputs.anomalies, scenario, anchoring, horizon)?;
        trajs.extend(project_all(&rec.fit, &panel, &path, baseline, horizon)?);
        paths.push(path);
    }
    Ok((paths, trajs))
}

pub fn write_projection(
    paths: &[ScenarioPath],
    trajs: &[crate::project::Trajectory],
    plotdata: bool,
    dir: &Path,
    traj_name: &str,
    m: &mut Manifest,
) -> Result<()> {
    let (header, rows) = trajectory_rows(trajs);
    record_table(m, dir, traj_name, &header, &rows)?;
    if plotdata {
        for (name, header, rows) in plot_tables(paths, trajs) {
            record_table(m, dir, name, &header, &rows)?;
        }
    }
    Ok(())
}

pub fn project_stage(cfg: &RunConfig, store_dir: &Path, fit_dir: &Path, dir: &Path, force: bool) -> Result<StageOutcome> {
    let upstream: Manifest = read_json(&fit_dir.join(STAGE_MANIFEST))?;
    let features: Manifest = read_json(&store_dir.join(store::FEATURES_MANIFEST))?;
    let section = (
        upstream.output_hash(),
        features.output_hash(),
        &cfg.projection_spec,
        &cfg.scenarios,
        cfg.anchoring,
        cfg.baseline,
        cfg.horizon,
        cfg.plotdata,
    );
    let mut m = Manifest::new("project", config_value(cfg)?);
    m.key = stage_key("project", &section)?;
    m.inputs.insert("fit".into(), upstream.output_hash());
    run_stage(dir, STAGE_MANIFEST, m, force, |m| {
        let s2 = load_stage2(store_dir)?;
        let names: Vec<String> = cfg.resolved_specs()?.into_iter().map(|(n, _)| n).collect();
        let rec = projection_fit(cfg, &load_fits(fit_dir, &names)?)?;
        m.notes.push(format!("projection model: {}", rec.name));
        m.notes.push(format!("anchoring: {:?}", cfg.anchoring));
        let (paths, trajs) = project_fit(&s2, &rec, &cfg.scenarios, cfg.anchoring, cfg.baseline, cfg.horizon)?;
        write_projection(&paths, &trajs, cfg.plotdata, dir, "trajectories.csv", m)
    })
}

/// Bootstrap summary without per-replicate trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub model: String,
    pub scenario: Scenario,
    pub sector: String,
    pub seed: u64,
    pub replicates: usize,
    pub failures: usize,
    pub quantile_method: String,
    pub failed_replicates: Vec<(usize, String)>,
}

/// Bootstrap of one model under one scenario; `years` are the panel years.
pub fn bootstrap_model(
    s2: &Stage2,
    spec: &ModelSpec,
    sector: &str,
    years: (i32, i32),
    scenario: Scenario,
    anchoring: Anchoring,
    settings: &BootstrapSettings,
) -> Result<BootstrapRun> {
    let panel = assemble(&s2.inputs, sector, years.0..=years.1, spec)?;
    let path = extrapolate_climate(&s2.rcp, &s2.inputs.anomalies, scenario, anchoring, settings.horizon)?;
    block_bootstrap(&panel, spec, &path, settings)
}

pub fn write_bootstrap(runs: &[(String, BootstrapRun)], coefficients: bool, dir: &Path, m: &mut Manifest) -> Result<()> {
    let mut header = Vec::new();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (model, run) in runs {
        let (h, r) = run.quantile_rows();
        header = h;
        rows.extend(r);
        if coefficients {
            let (h, r) = run.coefficient_rows();
            let h: Vec<&str> = h.iter().map(String::as_str).collect();
            record_table(m, dir, &format!("coefficients_{}.csv", scenario_slug(run.scenario)), &h, &r)?;
        }
        summaries.push(BootstrapSummary {
            model: model.clone(),
            scenario: run.scenario,
            sector: run.sector.clone(),
            seed: run.seed,
            replicates: run.replicates.len(),
            failures: run.failures,
            quantile_method: run.quantile_method.clone(),
            failed_replicates: run
                .replicates
                .iter()
                .filter(|r| !r.ok)
                .map(|r| (r.index, r.error.clone().unwrap_or_default()))
                .collect(),
        });
    }
    record_table(m, dir, "quantiles.csv", &header, &rows)?;
    record_json(m, dir, "summary.json", &summaries)
}

pub fn scenario_slug(s: Scenario) -> &'static str {
    match s {
        Scenario::Rcp26 => "rcp26",
        Scenario::Rcp45 => "rcp45",
        Scenario::Rcp85 => "rcp85",
    }
}

pub fn bootstrap_stage(cfg: &RunConfig, store_dir: &Path, fit_dir: &Path, dir: &Path, force: bool) -> Result<StageOutcome> {
    let upstream: Manifest = read_json(&fit_dir.join(STAGE_MANIFEST))?;
    let features: Manifest = read_json(&store_dir.join(store::FEATURES_MANIFEST))?;
    let settings = cfg.bootstrap_settings();
    // thread count does not change results, so it stays out of the key
    let keyed = BootstrapSettings { threads: 1, ..settings.clone() };
    let section = (
        upstream.output_hash(),
        features.output_hash(),
        &cfg.projection_spec,
        &cfg.scenarios,
        cfg.anchoring,
        &keyed,
        cfg.bootstrap_coefficients,
    );
    let mut m = Manifest::new("bootstrap", config_value(cfg)?);
    m.key = stage_key("bootstrap", &section)?;
    m.inputs.insert("fit".into(), upstream.output_hash());
    run_stage(dir, STAGE_MANIFEST, m, force, |m| {
        let s2 = load_stage2(store_dir)?;
        let names: Vec<String> = cfg.resolved_specs()?.into_iter().map(|(n, _)| n).collect();
        let rec = projection_fit(cfg, &load_fits(fit_dir, &names)?)?;
        m.notes.push("quantiles: type 7 (linear interpolation of order statistics)".into());
        let mut runs = Vec::new();
        for &scenario in &cfg.scenarios {
            runs.push((
                rec.name.clone(),
                bootstrap_model(&s2, &rec.spec, &rec.sector, rec.years, scenario, cfg.anchoring, &settings)?,
            ));
        }
        write_bootstrap(&runs, cfg.bootstrap_coefficients, dir, m)
    })
}

/// Stage directories under the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub store: PathBuf,
    pub fits: PathBuf,
    pub infer: PathBuf,
    pub project: PathBuf,
    pub bootstrap: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Layout {
        Layout {
            store: root.join("store"),
            fits: root.join("fits"),
            infer: root.join("infer"),
            project: root.join("project"),
            bootstrap: root.join("bootstrap"),
        }
    }
}

/// Which stages ran (true) or were reused from a previous run (false).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stages: Vec<(String, bool)>,
}

impl RunSummary {
    pub fn recomputed(&self) -> usize {
        self.stages.iter().filter(|(_, ran)| *ran).count()
    }
}

/// Runs every stage in order, reusing stages whose inputs are unchanged.
pub fn run_all(cfg: &RunConfig, force: bool) -> Result<RunSummary> {
    cfg.validate()?;
    cfg.validate_inputs()?;
    let l = Layout::new(&cfg.output);
    std::fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    write_json(&cfg.output.join("run_config.json"), cfg)?;
    let mut summary = RunSummary::default();
    let mut note = |name: &str, o: StageOutcome| summary.stages.push((name.to_string(), o.ran));
    note("ingest", ingest_stage(cfg, &l.store, force)?);
    note("features", features_stage(cfg, &l.store, force)?);
    note("fit", fit_stage(cfg, &l.store, &l.fits, force)?);
    note("infer", infer_stage(cfg, &l.store, &l.fits, &l.infer, force)?);
    note("project", project_stage(cfg, &l.store, &l.fits, &l.project, force)?);
    if cfg.bootstrap.replicates > 0 {
        note("bootstrap", bootstrap_stage(cfg, &l.store, &l.fits, &l.bootstrap, force)?);
    }
    Ok(summary)
}

/// Files written by [`synth_stage`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub raw: RawPaths,
    pub config_path: PathBuf,
    pub truth_path: PathBuf,
    pub store: PathBuf,
}

/// Draws a synthetic data set and lays it out as a ready-to-run project:
/// raw inputs under `raw/`, the truth record, a run config pointing at the
/// raw files, and the ingest and features stages already applied in `store/`.
pub fn synth_stage(config: &crate::synth::SynthConfig, out: &Path) -> Result<SynthOutput> {
    let data = crate::synth::generate(config)?;
    let raw_dir = out.join("raw");
    let raw = crate::synth::write_raw_inputs(&data, &raw_dir)?;
    let truth_path = out.join("truth.json");
    write_json(&truth_path, &data.truth)?;
    let years = (config.start_year, config.end_year());
    let cfg = RunConfig {
        inputs: RawPaths {
            stations: PathBuf::from("raw/stations.csv"),
            econ: PathBuf::from("raw/econ.csv"),
            indices: PathBuf::from("raw/indices.csv"),
            events: Some(PathBuf::from("raw/events.csv")),
            rcp: PathBuf::from("raw/rcp.csv"),
        },
        baseline: years,
        sector: config.sector.clone(),
        output: PathBuf::from("run"),
        ..RunConfig::default()
    };
    let config_path = out.join("run.json");
    write_json(&config_path, &cfg)?;
    let resolved = RunConfig::load(&config_path)?;
    let store = out.join("store");
    ingest_stage(&resolved, &store, true)?;
    features_stage(&resolved, &store, true)?;
    Ok(SynthOutput { raw, config_path, truth_path, store })
}
