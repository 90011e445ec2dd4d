use panelclim::boot::{block_bootstrap, draw_clusters, replicate_fit, resample_panel, BootstrapSettings};
use panelclim::estimate::fit;
use panelclim::panel::{compile, CompileOptions, ModelSpec, Panel};
use panelclim::project::{extrapolate_climate, Anchoring, ScenarioPath};
use panelclim::synth::{generate, SynthConfig};
use panelclim::types::Scenario;
use proptest::prelude::*;

fn setup(preset: &str, seed: u64) -> (Panel, ModelSpec, ScenarioPath) {
    let spec = ModelSpec::preset(preset).unwrap();
    let config = SynthConfig { spec: spec.clone(), seed, ..SynthConfig::default() };
    let d = generate(&config).unwrap();
    let path = extrapolate_climate(&d.rcp, &d.inputs.anomalies, Scenario::Rcp45, Anchoring::Endpoint, 2050).unwrap();
    (d.panel(&spec).unwrap(), spec, path)
}

fn settings(replicates: usize, threads: usize) -> BootstrapSettings {
    BootstrapSettings { replicates, seed: 99, threads, ..BootstrapSettings::default() }
}

#[test]
fn identity_draw_reproduces_the_full_fit() {
    let (panel, spec, _) = setup("m5", 1);
    let full = fit(&compile(&panel, &spec, &CompileOptions::default()).unwrap()).unwrap();
    let again = replicate_fit(&panel, &spec, &panel.clusters()).unwrap();
    assert_eq!(full.beta, again.beta);
    assert_eq!(full.theta, again.theta);
}

#[test]
fn repeated_clusters_get_distinct_labels() {
    let (panel, _, _) = setup("m1", 2);
    let draw = vec!["ON".to_string(), "ON".to_string(), "QC".to_string()];
    let r = resample_panel(&panel, &draw);
    assert_eq!(r.rows.len(), 60);
    assert_eq!(r.clusters(), ["ON", "ON#2", "QC"]);
}

#[test]
fn seeded_runs_are_identical_across_thread_counts() {
    let (panel, spec, path) = setup("m1", 3);
    let a = block_bootstrap(&panel, &spec, &path, &settings(40, 1)).unwrap();
    let b = block_bootstrap(&panel, &spec, &path, &settings(40, 3)).unwrap();
    assert_eq!(a.quantile_rows(), b.quantile_rows());
    assert_eq!(a.coefficient_rows(), b.coefficient_rows());
    let c = block_bootstrap(&panel, &spec, &path, &BootstrapSettings { seed: 100, ..settings(40, 1) }).unwrap();
    assert_ne!(a.quantile_rows(), c.quantile_rows());
}

#[test]
fn bands_are_ordered_and_cover_the_point_path() {
    let (panel, spec, path) = setup("m1", 4);
    let run = block_bootstrap(&panel, &spec, &path, &settings(200, 4)).unwrap();
    assert_eq!(run.failures, 0);
    assert_eq!(run.quantiles.len(), 10 * 34);
    assert!(run.quantiles.iter().all(|q| q.q025 <= q.q975));
    for &p in &run.provinces {
        let rows: Vec<_> = run.quantiles.iter().filter(|q| q.province == p && q.year > 2017).collect();
        let inside = rows.iter().filter(|q| q.q025 <= q.point && q.point <= q.q975).count();
        assert!(inside as f64 >= 0.8 * rows.len() as f64, "{p}: {inside}/{}", rows.len());
    }
}

#[test]
fn zero_replicates_are_rejected() {
    let (panel, spec, path) = setup("m1", 5);
    assert!(block_bootstrap(&panel, &spec, &path, &settings(0, 1)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn draws_depend_only_on_seed_and_index(seed in any::<u64>(), index in 0usize..10_000) {
        let labels: Vec<String> = (0..10).map(|k| format!("c{k}")).collect();
        let a = draw_clusters(&labels, seed, index);
        prop_assert_eq!(a.len(), labels.len());
        prop_assert_eq!(&a, &draw_clusters(&labels, seed, index));
        prop_assert!(a.iter().all(|l| labels.contains(l)));
    }
}
