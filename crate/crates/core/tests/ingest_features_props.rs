use std::collections::{BTreeMap, BTreeSet};

use panelclim::features::{
    anomaly_panel, pcgr, precip_anomaly, seasonalize, temp_anomaly, SeasonalCell, SeasonalClimate, Weighting,
    WinterConvention,
};
use panelclim::ingest::{
    coverage_filter, load_stations, write_stations, CoverageRule, EconRow, EconTable, Schema, StationMeta,
    StationRecord,
};
use panelclim::store::load_stage2;
use panelclim::synth::{generate, SynthConfig};
use panelclim::types::{Province, Season};
use proptest::prelude::*;

const HEADER: &str = "station_id,province,latitude,longitude,year,month,mean_temp,total_precip\n";

fn station_row() -> impl Strategy<Value = String> {
    (
        0..4usize,
        prop::sample::select(vec!["ON", "QC", "BC"]),
        prop::sample::select(vec!["45", "46.5", "95", ""]),
        1999..2002i32,
        1..=12u32,
        prop::option::of(-300..300i32),
        prop::option::of(0..2000i32),
    )
        .prop_map(|(id, prov, lat, year, month, t, p)| {
            let t = t.map(|v| format!("{}", f64::from(v) / 10.0)).unwrap_or_else(|| "NA".into());
            let p = p.map(|v| format!("{}", f64::from(v) / 10.0)).unwrap_or_default();
            format!("S{id},{prov},{lat},-75,{year},{month},{t},{p}\n")
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn station_loading_is_idempotent(rows in prop::collection::vec(station_row(), 1..60)) {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw.csv");
        std::fs::write(&raw, format!("{HEADER}{}", rows.concat())).unwrap();
        let first = load_stations(&raw, &Schema::default()).unwrap();
        prop_assert_eq!(
            first.report.input_rows,
            first.report.retained_rows + first.report.dropped_total()
        );
        let once = dir.path().join("once.csv");
        let h1 = write_stations(&once, &first).unwrap();
        let second = load_stations(&once, &Schema::default()).unwrap();
        prop_assert_eq!(&second.records, &first.records);
        prop_assert_eq!(&second.meta, &first.meta);
        prop_assert_eq!(second.report.dropped_total(), 0);
        let h2 = write_stations(&dir.path().join("twice.csv"), &second).unwrap();
        prop_assert_eq!(h1, h2);
    }

    #[test]
    fn lowering_the_coverage_threshold_never_drops_stations(
        counts in prop::collection::vec((1..=24usize, 1..=24usize), 1..8),
        hi in 1..=10u64,
        lo_frac in 0.0..1.0f64,
    ) {
        let lo = (hi as f64 * lo_frac).floor() as u64;
        let mut meta = Vec::new();
        let mut records = Vec::new();
        for (k, &(nt, np)) in counts.iter().enumerate() {
            let id = format!("S{k}");
            meta.push(StationMeta {
                station_id: id.clone(),
                province: Province::ON,
                latitude: 45.0,
                longitude: -75.0,
                subregion_id: None,
                subregion_population: None,
            });
            for m in 0..24usize {
                records.push(StationRecord {
                    station_id: id.clone(),
                    province: Province::ON,
                    latitude: 45.0,
                    longitude: -75.0,
                    year: 2000 + (m / 12) as i32,
                    month: (m % 12) as u32 + 1,
                    mean_temp: (m < nt).then_some(1.0),
                    total_precip: (m < np).then_some(1.0),
                });
            }
        }
        let strict = coverage_filter(&records, &meta, 2000..=2001, CoverageRule { numerator: hi, denominator: 10 });
        let loose = coverage_filter(&records, &meta, 2000..=2001, CoverageRule { numerator: lo, denominator: 10 });
        if let Ok(strict) = strict {
            prop_assert!(strict.retained_ids().is_subset(&loose.unwrap().retained_ids()));
        }
    }

    #[test]
    fn anomalies_sum_to_zero_over_the_baseline(
        temps in prop::collection::vec(-30.0..30.0f64, 40),
        precs in prop::collection::vec(1.0..400.0f64, 40),
    ) {
        let sc = climate(&temps, &precs, &(2000..2010).collect::<Vec<_>>());
        let t = temp_anomaly(&sc, 2000..=2009).unwrap();
        let p = precip_anomaly(&sc, 2000..=2009).unwrap();
        for s in Season::ALL {
            let ts: f64 = t.iter().filter(|(k, _)| k.1 == s).map(|(_, v)| v).sum();
            let ps: f64 = p.iter().filter(|(k, _)| k.1 == s).map(|(_, v)| 1.0 + v / 100.0).sum();
            prop_assert!(ts.abs() < 1e-9);
            prop_assert!((ps - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn relabeling_years_permutes_anomalies(
        temps in prop::collection::vec(-30.0..30.0f64, 40),
        precs in prop::collection::vec(1.0..400.0f64, 40),
        perm in Just((2000..2010).collect::<Vec<i32>>()).prop_shuffle(),
    ) {
        let years: Vec<i32> = (2000..2010).collect();
        let a = anomaly_panel(&climate(&temps, &precs, &years), 2000..=2009, Weighting::Unweighted).unwrap();
        let b = anomaly_panel(&climate(&temps, &precs, &perm), 2000..=2009, Weighting::Unweighted).unwrap();
        let bi = b.index();
        for c in &a.cells {
            let moved = perm[(c.year - 2000) as usize];
            let d = bi[&(c.province, c.season, moved)];
            prop_assert!((c.temp_anomaly - d.temp_anomaly).abs() < 1e-12);
            prop_assert!((c.precip_anomaly - d.precip_anomaly).abs() < 1e-10);
        }
    }

    #[test]
    fn equal_populations_match_the_unweighted_mean(
        vals in prop::collection::vec((-20.0..20.0f64, 0.0..300.0f64), 36),
        pop in 1.0..1e6f64,
    ) {
        let meta: Vec<StationMeta> = (0..3)
            .map(|k| StationMeta {
                station_id: format!("S{k}"),
                province: Province::MB,
                latitude: 50.0,
                longitude: -97.0,
                subregion_id: Some(format!("R{k}")),
                subregion_population: Some(pop),
            })
            .collect();
        let records: Vec<StationRecord> = vals
            .iter()
            .enumerate()
            .map(|(i, &(t, p))| StationRecord {
                station_id: format!("S{}", i % 3),
                province: Province::MB,
                latitude: 50.0,
                longitude: -97.0,
                year: 2001,
                month: (i / 3) as u32 + 1,
                mean_temp: Some(t),
                total_precip: Some(p),
            })
            .collect();
        let conv = WinterConvention::SameYear;
        let u = seasonalize(&records, &meta, Weighting::Unweighted, conv).unwrap();
        let w = seasonalize(&records, &meta, Weighting::Population, conv).unwrap();
        prop_assert_eq!(u.cells.len(), 4);
        for (a, b) in u.cells.iter().zip(&w.cells) {
            prop_assert!((a.mean_temp - b.mean_temp).abs() < 1e-12);
            prop_assert!((a.mean_precip - b.mean_precip).abs() < 1e-10);
        }
    }

    #[test]
    fn growth_rates_telescope(
        ratios in prop::collection::vec(0.8..1.25f64, 2..15),
        pop_growth in 0.98..1.03f64,
    ) {
        let mut rows = Vec::new();
        let (mut y, mut pop) = (30_000.0, 1e6);
        for (i, r) in std::iter::once(&1.0).chain(&ratios).enumerate() {
            y *= r;
            pop *= pop_growth;
            rows.push(EconRow { province: Province::NS, year: 2000 + i as i32, sector: "TOTAL".into(), gdp_chained: y * pop, population: pop });
        }
        let g = pcgr(&EconTable { rows: rows.clone() }).unwrap();
        prop_assert_eq!(g.len(), ratios.len());
        for (obs, r) in g.iter().zip(&ratios) {
            prop_assert!((obs.pcgr - r.ln()).abs() < 1e-12);
        }
        let total: f64 = g.iter().map(|o| o.pcgr).sum();
        let first = rows[0].gdp_chained / rows[0].population;
        let last = rows.last().map(|r| r.gdp_chained / r.population).unwrap();
        prop_assert!((total - (last / first).ln()).abs() < 1e-11);
    }
}

fn climate(temps: &[f64], precs: &[f64], years: &[i32]) -> SeasonalClimate {
    let mut cells = Vec::new();
    for (si, s) in Season::ALL.into_iter().enumerate() {
        for (yi, &y) in years.iter().enumerate() {
            let k = si * years.len() + yi;
            cells.push(SeasonalCell { province: Province::PE, season: s, year: y, mean_temp: temps[k], mean_precip: precs[k] });
        }
    }
    SeasonalClimate { cells, incomplete: Vec::new() }
}

#[test]
fn ninety_percent_rule_on_the_toy_province() {
    let counts = [240usize, 230, 100];
    let mut meta = Vec::new();
    let mut records = Vec::new();
    for (k, &n) in counts.iter().enumerate() {
        let id = format!("T{k}");
        meta.push(StationMeta {
            station_id: id.clone(),
            province: Province::SK,
            latitude: 52.0,
            longitude: -106.0,
            subregion_id: None,
            subregion_population: None,
        });
        for m in 0..240usize {
            let have = m < n;
            records.push(StationRecord {
                station_id: id.clone(),
                province: Province::SK,
                latitude: 52.0,
                longitude: -106.0,
                year: 1998 + (m / 12) as i32,
                month: (m % 12) as u32 + 1,
                mean_temp: have.then_some(0.0),
                total_precip: have.then_some(1.0),
            });
        }
    }
    let r = coverage_filter(&records, &meta, 1998..=2017, CoverageRule::default()).unwrap();
    assert_eq!(r.retained_ids(), BTreeSet::from(["T0".to_string(), "T1".to_string()]));
}

#[test]
fn synthetic_raw_files_reproduce_the_generated_features() {
    let config = SynthConfig { seed: 5, ..SynthConfig::default() };
    let data = generate(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = panelclim::pipeline::synth_stage(&config, dir.path()).unwrap();
    let s2 = load_stage2(&out.store).unwrap();

    let ingest: panelclim::store::Manifest =
        panelclim::textio::read_json(&out.store.join(panelclim::store::INGEST_MANIFEST)).unwrap();
    assert_eq!(ingest.drops["duplicate_record"], 1);
    assert_eq!(ingest.drops["coordinates_out_of_range"], 1);
    assert_eq!(ingest.drops["stations_below_coverage"], config.n_provinces);

    let want = data.inputs.anomalies.index();
    let got = s2.inputs.anomalies.index();
    assert_eq!(want.len(), got.len());
    for (k, a) in &want {
        let b = got[k];
        assert!((a.temp_anomaly - b.temp_anomaly).abs() < 1e-7, "{k:?}");
        assert!((a.precip_anomaly - b.precip_anomaly).abs() < 1e-6, "{k:?}");
    }
    let want: BTreeMap<_, _> = data.inputs.growth.iter().map(|g| ((g.province, g.year), g.pcgr)).collect();
    assert_eq!(want.len(), s2.inputs.growth.len());
    for g in &s2.inputs.growth {
        assert!((want[&(g.province, g.year)] - g.pcgr).abs() < 1e-8);
    }
    assert_eq!(s2.inputs.index_growth.len(), data.inputs.index_growth.len());
    assert_eq!(s2.inputs.events, data.inputs.events);
}
