use nalgebra::{DMatrix, DVector};
use panelclim::estimate::{fit, fit_ols};
use panelclim::infer::{ame, cr2_vcov, report_table, satterthwaite_df, AmeAveraging, PINV_TOL};
use panelclim::panel::{compile, CompileOptions, ModelSpec, Panel, Term};
use panelclim::synth::{cr2_oracle, fd_margins_oracle, generate, random_intercept_design, SynthConfig};
use panelclim::types::{ClimateVar, Season};
use proptest::prelude::*;

fn synth(preset: &str, seed: u64) -> (Panel, ModelSpec) {
    let spec = ModelSpec::preset(preset).unwrap();
    let config = SynthConfig { spec: spec.clone(), seed, ..SynthConfig::default() };
    (generate(&config).unwrap().panel(&spec).unwrap(), spec)
}

#[test]
fn cr2_matches_dense_oracle() {
    for preset in ["m1", "m5", "m2s", "m6"] {
        let (panel, spec) = synth(preset, 17);
        let design = compile(&panel, &spec, &CompileOptions::default()).unwrap();
        let f = fit(&design).unwrap();
        let (robust, _) = cr2_vcov(&f, &design).unwrap();
        let oracle = cr2_oracle(&design, &f, PINV_TOL).unwrap();
        let v = robust.matrix();
        let scale = oracle.vcov.abs().max();
        assert!((&v - &oracle.vcov).abs().max() < 1e-9 * scale.max(1e-12) , "{preset}");
        for (a, b) in robust.df.iter().zip(&oracle.df) {
            assert!((a - b).abs() < 1e-9 * b.max(1.0), "{preset}: df {a} vs {b}");
        }
    }
}

#[test]
fn robust_vcov_is_symmetric_psd() {
    let (panel, spec) = synth("m5", 3);
    let design = compile(&panel, &spec, &CompileOptions::default()).unwrap();
    let f = fit(&design).unwrap();
    let (robust, _) = cr2_vcov(&f, &design).unwrap();
    let v = robust.matrix();
    assert!((&v - v.transpose()).abs().max() < 1e-12 * v.abs().max());
    let eig = v.clone().symmetric_eigenvalues();
    assert!(eig.iter().all(|&l| l >= -1e-10 * v.abs().max()));
    assert!(robust.df.iter().all(|&d| d > 0.0));
}

#[test]
fn satterthwaite_df_is_scale_free_and_bounded() {
    let (panel, spec) = synth("m1", 9);
    let design = compile(&panel, &spec, &CompileOptions::default()).unwrap();
    let f = fit(&design).unwrap();
    let (robust, parts) = cr2_vcov(&f, &design).unwrap();
    let j = design.column_of(&Term::Climate(ClimateVar::temp(Season::Winter))).unwrap();
    let mut c = DVector::zeros(design.p());
    c[j] = 1.0;
    let df1 = satterthwaite_df(&parts, &c).unwrap();
    let df10 = satterthwaite_df(&parts, &(c * 10.0)).unwrap();
    assert!((df1 - df10).abs() < 1e-10 * df1);
    assert!((df1 - robust.df[j]).abs() < 1e-12 * df1);
    let g = design.cluster_labels.len() as f64;
    assert!(robust.df.iter().all(|&d| d <= g - 1.0 + 1e-6));
    assert!(satterthwaite_df(&parts, &DVector::zeros(design.p())).is_err());
}

#[test]
fn renaming_clusters_leaves_standard_errors() {
    let (panel, spec) = synth("m5", 12);
    let design = compile(&panel, &spec, &CompileOptions::default()).unwrap();
    let f = fit(&design).unwrap();
    let (a, _) = cr2_vcov(&f, &design).unwrap();
    let mut renamed = panel.clone();
    for r in &mut renamed.rows {
        r.cluster = format!("z{}", r.cluster);
    }
    let d2 = compile(&renamed, &spec, &CompileOptions::default()).unwrap();
    let f2 = fit(&d2).unwrap();
    let (b, _) = cr2_vcov(&f2, &d2).unwrap();
    let j = design.column_of(&Term::Climate(ClimateVar::temp(Season::Summer))).unwrap();
    let j2 = d2.column_of(&Term::Climate(ClimateVar::temp(Season::Summer))).unwrap();
    assert!((a.se(j) - b.se(j2)).abs() < 1e-10 * a.se(j));
}

#[test]
fn balanced_duplication_keeps_coefficients() {
    let (panel, spec) = synth("m1", 14);
    let mut doubled = panel.clone();
    doubled.rows.extend(panel.rows.iter().cloned());
    let a = fit(&compile(&panel, &spec, &CompileOptions::default()).unwrap()).unwrap();
    let b = fit(&compile(&doubled, &spec, &CompileOptions::default()).unwrap()).unwrap();
    for (x, y) in a.beta.iter().zip(&b.beta) {
        assert!((x - y).abs() < 1e-10 * x.abs().max(1e-3));
    }
}

#[test]
fn cr2_close_to_classical_under_homoskedastic_errors() {
    let d = random_intercept_design(40, 250, 0.0, 1.0, 5);
    let mut d = d;
    d.random.clear();
    let f = fit_ols(&d).unwrap();
    let (robust, _) = cr2_vcov(&f, &d).unwrap();
    for j in 0..d.p() {
        let classical = f.vcov_model[j][j].sqrt();
        let ratio = robust.se(j) / classical;
        assert!((ratio - 1.0).abs() < 0.15, "column {j}: ratio {ratio}");
    }
}

fn margins_check(preset: &str, seed: u64) {
    let (panel, spec) = synth(preset, seed);
    let design = compile(&panel, &spec, &CompileOptions::default()).unwrap();
    let f = fit(&design).unwrap();
    let (robust, parts) = cr2_vcov(&f, &design).unwrap();
    for v in ClimateVar::ALL {
        let m = ame(&f, &robust, &parts, &panel, v, AmeAveraging::Pooled).unwrap();
        let fd = fd_margins_oracle(&f, &panel, v, 1e-4);
        assert!((m.ame - fd).abs() < 1e-6, "{preset} {v}: {} vs {fd}", m.ame);
        assert!(m.ci_low <= m.ame && m.ame <= m.ci_high);
        assert!((0.0..=1.0).contains(&m.p_value));
    }
}

#[test]
fn ame_matches_finite_differences() {
    margins_check("m1", 1);
    margins_check("m2", 2);
    margins_check("m2s", 3);
}

#[test]
fn linear_ame_is_the_coefficient() {
    let (panel, spec) = synth("m1", 6);
    let design = compile(&panel, &spec, &CompileOptions::default()).unwrap();
    let f = fit(&design).unwrap();
    let (robust, parts) = cr2_vcov(&f, &design).unwrap();
    for v in ClimateVar::ALL {
        let m = ame(&f, &robust, &parts, &panel, v, AmeAveraging::Pooled).unwrap();
        let beta = f.coef(&Term::Climate(v)).unwrap() * v.report_scale();
        assert_eq!(m.ame.to_bits(), beta.to_bits());
    }
}

#[test]
fn quadratic_ame_at_zero_mean_is_linear_coefficient() {
    // β = 0.002, β_sq = −0.001 with anomalies averaging to zero
    let (mut panel, spec) = synth("m2", 7);
    let k = ClimateVar::temp(Season::Spring).index();
    let mean = panel.rows.iter().map(|r| r.climate[k]).sum::<f64>() / panel.rows.len() as f64;
    for r in &mut panel.rows {
        r.climate[k] -= mean;
    }
    let design = compile(&panel, &spec, &CompileOptions::default()).unwrap();
    let mut f = fit(&design).unwrap();
    let v = ClimateVar::temp(Season::Spring);
    let jl = f.terms.iter().position(|t| *t == Term::Climate(v)).unwrap();
    let jq = f.terms.iter().position(|t| *t == Term::Square(v)).unwrap();
    f.beta[jl] = 0.002;
    f.beta[jq] = -0.001;
    let (robust, parts) = cr2_vcov(&fit(&design).unwrap(), &design).unwrap();
    let m = ame(&f, &robust, &parts, &panel, v, AmeAveraging::Pooled).unwrap();
    assert!((m.ame - 0.002).abs() < 1e-15);
}

#[test]
fn table_has_stars_and_fit_rows() {
    let mut fits = Vec::new();
    for preset in ["m1", "m5"] {
        let (panel, spec) = synth(preset, 2);
        let design = compile(&panel, &spec, &CompileOptions::default()).unwrap();
        let f = fit(&design).unwrap();
        let (r, _) = cr2_vcov(&f, &design).unwrap();
        fits.push((preset.to_string(), f, r));
    }
    let refs: Vec<_> = fits.iter().map(|(n, f, r)| (n.clone(), f, r)).collect();
    let table = report_table(&refs);
    let (header, rows) = table.to_rows();
    assert_eq!(header, ["block", "term", "row", "m1", "m5"]);
    assert_eq!(rows[0][1], "Spring Temp.");
    assert_eq!(rows[0][0], "Temperature");
    assert_eq!(rows[8][0], "Precipitation");
    assert_eq!(rows[rows.len() - 3][1], "AIC");
    assert_eq!(rows[rows.len() - 2][1], "BIC");
    assert!(table.best_bic.is_some());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cr2_oracle_agreement_on_random_ols_panels(seed in 0u64..5000) {
        let d = random_intercept_design(10, 6, 0.5, 1.0, seed);
        let mut d = d;
        d.random.clear();
        let f = fit_ols(&d).unwrap();
        let (robust, _) = cr2_vcov(&f, &d).unwrap();
        let oracle = cr2_oracle(&d, &f, PINV_TOL).unwrap();
        let diff: DMatrix<f64> = robust.matrix() - &oracle.vcov;
        prop_assert!(diff.abs().max() < 1e-10 * oracle.vcov.abs().max());
        for (a, b) in robust.df.iter().zip(&oracle.df) {
            prop_assert!((a - b).abs() < 1e-9 * b);
        }
    }
}
