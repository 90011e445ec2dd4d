//! Synthetic panels drawn from the growth model with known parameters, and
//! literal-formula reference implementations used to check the production
//! estimators.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::FitResult;
use crate::features::{anomaly_panel, GrowthObs, IndexGrowthObs, SeasonalCell, SeasonalClimate, Weighting};
use crate::ingest::{bundled_events, Horizon, IndexName, RcpDelta, RcpDeltaTable};
use crate::panel::{assemble, CompiledDesign, EventEffect, ModelSpec, Panel, PanelInputs, RandomBlock, Term, YearEffect};
use crate::types::{ClimateVar, Province, Scenario, Season};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_provinces: usize,
    pub start_year: i32,
    pub n_years: usize,
    pub sector: String,
    /// Specification the response is generated from.
    pub spec: ModelSpec,
    /// True coefficients keyed by design column name (e.g. "Winter Temp.",
    /// "lag", "world_gdp"); unlisted terms are zero.
    pub beta: BTreeMap<String, f64>,
    pub province_sd: f64,
    pub year_sd: f64,
    pub event_sd: f64,
    /// Random slope sd on the design scale, applied to every sloped term.
    pub slope_sd: f64,
    pub trend_sd: f64,
    pub error_sd: f64,
    pub seed: u64,
    /// Linear warming in °C per year, by season (spring..winter).
    pub warming_trend: [f64; 4],
    pub temp_noise_sd: f64,
    /// Relative sd of seasonal precipitation around its mean.
    pub precip_noise_sd: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let beta = [
            ("(Intercept)", 0.015),
            ("lag", 0.2),
            ("Spring Temp.", 0.001),
            ("Summer Temp.", -0.004),
            ("Fall Temp.", 0.002),
            ("Winter Temp.", -0.0055),
            ("Spring Precip.", 0.01),
            ("Summer Precip.", -0.005),
            ("Fall Precip.", 0.0),
            ("Winter Precip.", 0.004),
            ("world_gdp", 0.4),
            ("energy_index", 0.02),
            ("nonenergy_index", 0.03),
            ("target_rate", -0.002),
            ("unemployment", -0.001),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        SynthConfig {
            n_provinces: 10,
            start_year: 1998,
            n_years: 20,
            sector: "TOTAL".into(),
            spec: ModelSpec::preset("m5").expect("preset"),
            beta,
            province_sd: 0.01,
            year_sd: 0.01,
            event_sd: 0.01,
            slope_sd: 0.002,
            trend_sd: 0.0005,
            error_sd: 0.01,
            seed: 1,
            warming_trend: [0.0; 4],
            temp_noise_sd: 1.0,
            precip_noise_sd: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_provinces < 2 || self.n_provinces > Province::ALL.len() {
            return Err(Error::Config("n_provinces must be between 2 and 10".into()));
        }
        if self.n_years < 3 {
            return Err(Error::Config("n_years must be at least 3".into()));
        }
        let sds = [
            self.province_sd,
            self.year_sd,
            self.event_sd,
            self.slope_sd,
            self.trend_sd,
            self.error_sd,
            self.temp_noise_sd,
            self.precip_noise_sd,
        ];
        if sds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("standard deviations must be finite and nonnegative".into()));
        }
        self.spec.validate()
    }

    pub fn end_year(&self) -> i32 {
        self.start_year + self.n_years as i32 - 1
    }

    pub fn provinces(&self) -> &[Province] {
        &Province::ALL[..self.n_provinces]
    }

    fn coef(&self, name: &str) -> f64 {
        self.beta.get(name).copied().unwrap_or(0.0)
    }
}

/// Realized random quantities of one synthetic draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: SynthConfig,
    pub province_effects: BTreeMap<Province, f64>,
    pub year_effects: BTreeMap<i32, f64>,
    pub event_effects: BTreeMap<u32, f64>,
    pub slopes: BTreeMap<String, BTreeMap<Province, f64>>,
    pub trends: BTreeMap<Province, f64>,
    /// Implied variance ratios by random block name.
    pub theta: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub inputs: PanelInputs,
    pub rcp: RcpDeltaTable,
    pub truth: Truth,
}

impl SynthData {
    /// Panel over the generated years, assembled for `spec`.
    pub fn panel(&self, spec: &ModelSpec) -> Result<Panel> {
        let c = &self.truth.config;
        assemble(&self.inputs, &c.sector, c.start_year..=c.end_year(), spec)
    }
}

/// Default scenario deltas: warming grows with forcing, winter warms 1.5×
/// faster, later provinces in the list warm a little more, precipitation
/// rises modestly.
pub fn default_rcp(provinces: &[Province]) -> RcpDeltaTable {
    let mut t = RcpDeltaTable::default();
    let base = [
        (Scenario::Rcp26, (1.0, 1.3), (2.0, 4.0)),
        (Scenario::Rcp45, (1.3, 2.0), (3.0, 5.0)),
        (Scenario::Rcp85, (1.6, 2.6), (4.0, 7.0)),
    ];
    for (scenario, (tn, tm), (pn, pm)) in base {
        for (pi, &p) in provinces.iter().enumerate() {
            for s in Season::ALL {
                let f = if s == Season::Winter { 1.5 } else { 1.0 } * (0.8 + 0.05 * pi as f64);
                t.cells.insert((scenario, p, s, Horizon::Near), RcpDelta { temp_delta: tn * f, precip_delta: pn });
                t.cells.insert((scenario, p, s, Horizon::Mid), RcpDelta { temp_delta: tm * f, precip_delta: pm });
            }
        }
    }
    t
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("validated sd")
}

/// Draws climate, indices and growth from the model of `config.spec`.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std = normal(1.0);
    let provinces = config.provinces().to_vec();
    let years: Vec<i32> = (config.start_year..=config.end_year()).collect();
    let spec = &config.spec;

    // seasonal climate levels
    let season_temp = [5.0, 17.0, 6.0, -10.0];
    let mut cells = Vec::new();
    for (pi, &p) in provinces.iter().enumerate() {
        for s in Season::ALL {
            let t0 = season_temp[s.index()] + 0.5 * pi as f64 - 2.0;
            let p0 = 150.0 + 20.0 * s.index() as f64 + 10.0 * pi as f64;
            for &y in &years {
                let trend = config.warming_trend[s.index()] * f64::from(y - config.start_year);
                let shock = 1.0 + config.precip_noise_sd * std.sample(&mut rng);
                cells.push(SeasonalCell {
                    province: p,
                    season: s,
                    year: y,
                    mean_temp: t0 + trend + config.temp_noise_sd * std.sample(&mut rng),
                    mean_precip: p0 * shock.max(0.05),
                });
            }
        }
    }
    let sc = SeasonalClimate { cells, incomplete: Vec::new() };
    let anomalies = anomaly_panel(&sc, config.start_year..=config.end_year(), Weighting::Unweighted)?;
    let anomaly_index = anomalies.index();

    // economic indices
    let mut index_growth = Vec::new();
    for &y in &years {
        let common = [
            (IndexName::WorldGdp, 0.03 + 0.015 * std.sample(&mut rng)),
            (IndexName::EnergyIndex, 0.2 * std.sample(&mut rng)),
            (IndexName::NonenergyIndex, 0.1 * std.sample(&mut rng)),
            (IndexName::TargetRate, 2.0 + 1.5 * std.sample(&mut rng)),
        ];
        for (name, value) in common {
            index_growth.push(IndexGrowthObs { name, province: None, year: y, value });
        }
        for &p in &provinces {
            let value = 7.0 + 2.0 * std.sample(&mut rng);
            index_growth.push(IndexGrowthObs { name: IndexName::Unemployment, province: Some(p), year: y, value });
        }
    }
    let index_value: BTreeMap<(IndexName, Option<Province>, i32), f64> =
        index_growth.iter().map(|o| ((o.name, o.province, o.year), o.value)).collect();

    // random quantities
    let province_effects: BTreeMap<Province, f64> =
        provinces.iter().map(|&p| (p, config.province_sd * std.sample(&mut rng))).collect();
    let year_effects: BTreeMap<i32, f64> = match spec.year_effect {
        YearEffect::None => BTreeMap::new(),
        _ => years.iter().map(|&y| (y, config.year_sd * std.sample(&mut rng))).collect(),
    };
    let events = bundled_events();
    let event_effects: BTreeMap<u32, f64> = if spec.include_events == EventEffect::Random {
        events.iter().map(|e| (e.event_id, config.event_sd * std.sample(&mut rng))).collect()
    } else {
        BTreeMap::new()
    };
    let mut slopes = BTreeMap::new();
    for v in spec.slope_terms() {
        let per: BTreeMap<Province, f64> =
            provinces.iter().map(|&p| (p, config.slope_sd * std.sample(&mut rng))).collect();
        slopes.insert(v.label(), per);
    }
    let trends: BTreeMap<Province, f64> = if spec.province_trends {
        provinces.iter().map(|&p| (p, config.trend_sd * std.sample(&mut rng))).collect()
    } else {
        BTreeMap::new()
    };

    // growth recursion
    let climate_terms = spec.climate_fixed_terms();
    let err = normal(config.error_sd);
    let mut growth = Vec::new();
    for &p in &provinces {
        let mut lag = config.coef("(Intercept)") + 0.01 * std.sample(&mut rng);
        growth.push(GrowthObs { province: p, sector: config.sector.clone(), year: config.start_year - 1, pcgr: lag });
        for &y in &years {
            let mut climate = [0.0; 8];
            for v in ClimateVar::ALL {
                let c = anomaly_index[&(p, v.season, y)];
                climate[v.index()] = match v.kind {
                    crate::types::ClimateKind::Temp => c.temp_anomaly,
                    crate::types::ClimateKind::Precip => c.precip_anomaly / 100.0,
                };
            }
            let mut mu = config.coef("(Intercept)") + province_effects[&p] + config.coef("lag") * lag;
            mu += year_effects.get(&y).copied().unwrap_or(0.0);
            for t in &climate_terms {
                mu += config.coef(&t.name()) * t.climate_value(&climate);
            }
            if spec.include_indices {
                for name in IndexName::ALL {
                    let key = (name, name.is_provincial().then_some(p), y);
                    mu += config.coef(name.as_str()) * index_value[&key];
                }
            }
            for e in &events {
                if e.year == y && e.provinces_affected.contains(&p) {
                    mu += event_effects.get(&e.event_id).copied().unwrap_or(0.0);
                }
            }
            for v in spec.slope_terms() {
                mu += slopes[&v.label()][&p] * climate[v.index()];
            }
            mu += trends.get(&p).copied().unwrap_or(0.0) * f64::from(y - 1998);
            let pcgr = mu + err.sample(&mut rng);
            growth.push(GrowthObs { province: p, sector: config.sector.clone(), year: y, pcgr });
            lag = pcgr;
        }
    }

    let ratio = |sd: f64| if config.error_sd > 0.0 { (sd / config.error_sd).powi(2) } else { f64::INFINITY };
    let mut theta = BTreeMap::new();
    if spec.year_effect == YearEffect::Random {
        theta.insert("year".to_string(), ratio(config.year_sd));
    }
    if spec.include_events == EventEffect::Random {
        theta.insert("events".to_string(), ratio(config.event_sd));
    }
    for v in spec.slope_terms() {
        theta.insert(format!("slope:{}", v.label()), ratio(config.slope_sd));
    }

    Ok(SynthData {
        inputs: PanelInputs { anomalies, growth, index_growth, events },
        rcp: default_rcp(&provinces),
        truth: Truth {
            config: config.clone(),
            province_effects,
            year_effects,
            event_effects,
            slopes,
            trends,
            theta,
        },
    })
}

/// Writes station, economic, index, event and delta tables whose cleaning
/// and feature stages reproduce `data.inputs`.
///
/// Each province gets three stations whose offsets cancel in the station
/// mean (temperature ±0.5 °C, precipitation ×0.9/×1.1), plus a station with
/// a single year of data that fails coverage screening, one repeated row and
/// one row with an impossible latitude.
pub fn write_raw_inputs(data: &SynthData, dir: &std::path::Path) -> Result<crate::pipeline::RawPaths> {
    use crate::features::WinterConvention;
    use crate::ingest::{EconRow, EconTable, IndexObs, IndexSeries, StationLoad, StationMeta, StationRecord};

    let c = &data.truth.config;
    let a = &data.inputs.anomalies;
    let provinces = c.provinces();
    let mut load = StationLoad { records: Vec::new(), meta: Vec::new(), report: Default::default() };
    for (pi, &p) in provinces.iter().enumerate() {
        let mut monthly: BTreeMap<(i32, u32), (f64, f64)> = BTreeMap::new();
        for cell in a.cells.iter().filter(|x| x.province == p) {
            let level = a
                .level(p, cell.season)
                .ok_or_else(|| Error::Data(format!("no baseline level for {p}/{}", cell.season)))?;
            let temp = level.temp_mean + cell.temp_anomaly;
            let precip = level.precip_mean * (1.0 + cell.precip_anomaly / 100.0);
            for ym in WinterConvention::PrecedingDecember.months(cell.season, cell.year) {
                monthly.insert(ym, (temp, precip));
            }
        }
        let stations = [("1", -0.5, 0.9, 1.0e5), ("2", 0.0, 1.0, 2.0e5), ("3", 0.5, 1.1, 3.0e5), ("X", 3.0, 2.0, 1.0e4)];
        for (k, (suffix, dt, fp, pop)) in stations.into_iter().enumerate() {
            let meta = StationMeta {
                station_id: format!("{}-{suffix}", p.code()),
                province: p,
                latitude: 44.0 + pi as f64 + 0.1 * k as f64,
                longitude: -62.0 - 6.0 * pi as f64 - 0.1 * k as f64,
                subregion_id: Some(format!("{}-R{suffix}", p.code())),
                subregion_population: Some(pop),
            };
            let months: Vec<_> = if suffix == "X" {
                monthly.iter().filter(|((y, _), _)| *y == c.start_year).collect()
            } else {
                monthly.iter().collect()
            };
            for (&(year, month), &(t, pr)) in months {
                load.records.push(StationRecord {
                    station_id: meta.station_id.clone(),
                    province: p,
                    latitude: meta.latitude,
                    longitude: meta.longitude,
                    year,
                    month,
                    mean_temp: Some(t + dt),
                    total_precip: Some(pr * fp),
                });
            }
            load.meta.push(meta);
        }
    }
    if let Some(first) = load.records.first().cloned() {
        load.records.insert(1, first.clone());
        let bad = StationMeta {
            station_id: "BAD-1".into(),
            province: first.province,
            latitude: 95.0,
            longitude: first.longitude,
            subregion_id: None,
            subregion_population: None,
        };
        load.records.push(StationRecord { station_id: bad.station_id.clone(), latitude: 95.0, ..first });
        load.meta.push(bad);
    }

    // GDP per capita compounds the growth path from an arbitrary level.
    let mut econ = EconTable::default();
    for (pi, &p) in provinces.iter().enumerate() {
        let mut growth: Vec<&GrowthObs> =
            data.inputs.growth.iter().filter(|g| g.province == p && g.sector == c.sector).collect();
        growth.sort_by_key(|g| g.year);
        let Some(first) = growth.first() else { continue };
        let mut per_capita = 40_000.0 * (1.0 + 0.05 * pi as f64);
        let mut population = 1.0e6 * (pi + 1) as f64;
        let mut year = first.year - 1;
        econ.rows.push(EconRow { province: p, year, sector: c.sector.clone(), gdp_chained: per_capita * population, population });
        for g in growth {
            year = g.year;
            per_capita *= g.pcgr.exp();
            population *= 1.01;
            econ.rows.push(EconRow { province: p, year, sector: c.sector.clone(), gdp_chained: per_capita * population, population });
        }
    }

    // Log-differenced series become levels starting at 100 one year early.
    let mut indices = IndexSeries::default();
    let mut by_series: BTreeMap<(IndexName, Option<Province>), Vec<&IndexGrowthObs>> = BTreeMap::new();
    for o in &data.inputs.index_growth {
        by_series.entry((o.name, o.province)).or_default().push(o);
    }
    for ((name, province), mut obs) in by_series {
        obs.sort_by_key(|o| o.year);
        if name.is_level() {
            indices.obs.extend(obs.iter().map(|o| IndexObs { name, province, year: o.year, value: o.value }));
            continue;
        }
        let mut level = 100.0;
        indices.obs.push(IndexObs { name, province, year: obs[0].year - 1, value: level });
        for o in obs {
            level *= o.value.exp();
            indices.obs.push(IndexObs { name, province, year: o.year, value: level });
        }
    }

    let files = crate::pipeline::RawPaths {
        stations: dir.join("stations.csv"),
        econ: dir.join("econ.csv"),
        indices: dir.join("indices.csv"),
        events: Some(dir.join("events.csv")),
        rcp: dir.join("rcp.csv"),
    };
    crate::ingest::write_stations(&files.stations, &load)?;
    crate::store::write_econ(&files.econ, &econ)?;
    crate::store::write_indices(&files.indices, &indices)?;
    crate::store::write_events(&dir.join("events.csv"), &data.inputs.events)?;
    crate::store::write_rcp(&files.rcp, &data.rcp)?;
    Ok(files)
}

/// One-way random-intercept layout: intercept and one standard-normal
/// covariate fixed, a group intercept with variance `theta·sigma²` random.
pub fn random_intercept_design(groups: usize, per_group: usize, theta: f64, sigma: f64, seed: u64) -> CompiledDesign {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = normal(1.0);
    let n = groups * per_group;
    let u: Vec<f64> = (0..groups).map(|_| (theta.sqrt() * sigma) * std.sample(&mut rng)).collect();
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { std.sample(&mut rng) });
    let y = DVector::from_fn(n, |i, _| 1.0 + 0.5 * x[(i, 1)] + u[i / per_group] + sigma * std.sample(&mut rng));
    let z = DMatrix::from_fn(n, groups, |i, g| f64::from(u8::from(i / per_group == g)));
    let labels: Vec<String> = (0..groups).map(|g| format!("g{g:02}")).collect();
    CompiledDesign {
        spec: ModelSpec::default(),
        y,
        x,
        terms: vec![Term::Intercept, Term::Lag],
        random: vec![RandomBlock { name: "group".into(), levels: labels.clone(), z }],
        clusters: (0..n).map(|i| i / per_group).collect(),
        cluster_labels: labels,
        reference_cluster: "g00".into(),
        trend_origin: 1998,
        warnings: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GlsOracle {
    pub beta: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub sigma2: f64,
    pub loglik_reml: f64,
}

/// Generalized least squares with the covariance `σ²(I + Σ θ_k Z_k Z_kᵀ)`
/// assembled and inverted explicitly.
pub fn dense_gls_oracle(design: &CompiledDesign, theta: &[f64]) -> Result<GlsOracle> {
    let n = design.y.len();
    let p = design.x.ncols();
    if n > 2000 {
        return Err(Error::Config("oracle limited to small designs".into()));
    }
    let mut v = DMatrix::<f64>::identity(n, n);
    for (blk, &t) in design.random.iter().zip(theta) {
        v += &blk.z * blk.z.transpose() * t;
    }
    let logdet_v = v.clone().lu().determinant().ln();
    let vinv = v.try_inverse().ok_or_else(|| Error::Numerical("singular covariance".into()))?;
    let xtvx = design.x.transpose() * &vinv * &design.x;
    let xtvx_inv = xtvx.clone().try_inverse().ok_or_else(|| Error::Numerical("singular XᵀV⁻¹X".into()))?;
    let beta = &xtvx_inv * design.x.transpose() * &vinv * &design.y;
    let r = &design.y - &design.x * &beta;
    let quad = (r.transpose() * &vinv * &r)[(0, 0)];
    let df = (n - p) as f64;
    let sigma2 = quad / df;
    let logdet_xtvx = xtvx.lu().determinant().ln();
    let loglik_reml =
        -0.5 * (df * (2.0 * std::f64::consts::PI * sigma2).ln() + logdet_v + logdet_xtvx + df);
    Ok(GlsOracle { beta, vcov: xtvx_inv * sigma2, sigma2, loglik_reml })
}

/// Restricted log-likelihood of a single-block balanced or unbalanced
/// random-intercept model, using the closed-form inverse and determinant
/// of each compound-symmetric block.
pub fn one_way_reml_oracle(design: &CompiledDesign, theta: f64) -> f64 {
    let n = design.y.len();
    let p = design.x.ncols();
    let mut xtvx = DMatrix::<f64>::zeros(p, p);
    let mut xtvy = DVector::<f64>::zeros(p);
    let mut ytvy = 0.0;
    let mut logdet_v = 0.0;
    for rows in design.cluster_rows() {
        let m = rows.len() as f64;
        let c = theta / (1.0 + m * theta);
        logdet_v += (1.0 + m * theta).ln();
        let xs = DVector::from_fn(p, |j, _| rows.iter().map(|&i| design.x[(i, j)]).sum::<f64>());
        let ys: f64 = rows.iter().map(|&i| design.y[i]).sum();
        for &i in &rows {
            for a in 0..p {
                xtvy[a] += design.x[(i, a)] * design.y[i];
                for b in 0..p {
                    xtvx[(a, b)] += design.x[(i, a)] * design.x[(i, b)];
                }
            }
            ytvy += design.y[i] * design.y[i];
        }
        xtvx -= &xs * xs.transpose() * c;
        xtvy -= &xs * (ys * c);
        ytvy -= c * ys * ys;
    }
    let chol = xtvx.clone().cholesky().expect("positive definite");
    let beta = chol.solve(&xtvy);
    let quad = ytvy - xtvy.dot(&beta);
    let df = (n - p) as f64;
    let sigma2 = quad / df;
    let logdet_xtvx = xtvx.determinant().ln();
    -0.5 * (df * (2.0 * std::f64::consts::PI * sigma2).ln() + logdet_v + logdet_xtvx + df)
}

fn pinv_sqrt(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let lmax = eig.eigenvalues.max();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > tol * lmax {
            let v = eig.eigenvectors.column(k);
            out += v * v.transpose() / l.sqrt();
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Cr2Oracle {
    pub vcov: DMatrix<f64>,
    pub df: Vec<f64>,
}

/// CR2 sandwich and Satterthwaite df from full n×n matrices: whitening
/// matrix, hat matrix, block-diagonal adjustment and cluster selectors.
pub fn cr2_oracle(design: &CompiledDesign, fit: &FitResult, tol: f64) -> Result<Cr2Oracle> {
    let n = design.y.len();
    let p = design.x.ncols();
    let mut h = DMatrix::<f64>::identity(n, n);
    for (blk, &t) in design.random.iter().zip(&fit.theta) {
        h += &blk.z * blk.z.transpose() * t;
    }
    let w = if fit.theta.iter().all(|&t| t == 0.0) { DMatrix::identity(n, n) } else { pinv_sqrt(&h, 0.0) };
    let xs = &w * &design.x;
    let e = &w * (&design.y - &design.x * DVector::from_column_slice(&fit.beta));
    let m = (xs.transpose() * &xs).try_inverse().ok_or_else(|| Error::Numerical("singular bread".into()))?;
    let hat = &xs * &m * xs.transpose();
    let i_minus_h = DMatrix::<f64>::identity(n, n) - &hat;
    let groups = design.cluster_rows();
    let selectors: Vec<DMatrix<f64>> = groups
        .iter()
        .map(|rows| DMatrix::from_fn(rows.len(), n, |a, i| f64::from(u8::from(rows[a] == i))))
        .collect();
    let mut a_full = DMatrix::<f64>::zeros(n, n);
    for s in &selectors {
        let block = s * &i_minus_h * s.transpose();
        let a = pinv_sqrt(&block, tol);
        a_full += s.transpose() * a * s;
    }
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for s in &selectors {
        let proj = s.transpose() * s;
        let v = xs.transpose() * &proj * &a_full * &proj * &e;
        meat += &v * v.transpose();
    }
    let vcov = &m * meat * &m;
    let mut df = Vec::with_capacity(p);
    for j in 0..p {
        let mut c = DVector::zeros(p);
        c[j] = 1.0;
        let pv: Vec<DVector<f64>> = selectors
            .iter()
            .map(|s| {
                let proj = s.transpose() * s;
                &i_minus_h * &proj * &a_full * &proj * &xs * &m * &c
            })
            .collect();
        let num: f64 = pv.iter().map(|v| v.norm_squared()).sum();
        let den: f64 = pv.iter().flat_map(|a| pv.iter().map(move |b| a.dot(b).powi(2))).sum();
        df.push(num * num / den);
    }
    Ok(Cr2Oracle { vcov, df })
}

/// Average central finite difference of the fitted climate surface with
/// respect to `var`, in reporting units; `step` is on the design scale.
pub fn fd_margins_oracle(fit: &FitResult, panel: &Panel, var: ClimateVar, step: f64) -> f64 {
    let surface = |c: &[f64; 8]| -> f64 {
        fit.terms.iter().zip(&fit.beta).filter(|(t, _)| t.is_climate()).map(|(t, b)| b * t.climate_value(c)).sum()
    };
    let total: f64 = panel
        .rows
        .iter()
        .map(|r| {
            let mut up = r.climate;
            let mut down = r.climate;
            up[var.index()] += step;
            down[var.index()] -= step;
            (surface(&up) - surface(&down)) / (2.0 * step)
        })
        .sum();
    total / panel.rows.len() as f64 * var.report_scale()
}
