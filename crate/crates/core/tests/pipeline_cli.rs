use std::path::Path;
use std::process::Command;

use panelclim::pipeline::{run_all, synth_stage, Layout, RunConfig, FAILED_MARKER};
use panelclim::synth::SynthConfig;

const BIN: &str = env!("CARGO_BIN_EXE_panelclim");

/// Synthetic project with a short bootstrap so the whole chain runs quickly.
fn project(dir: &Path, seed: u64) -> RunConfig {
    let out = synth_stage(&SynthConfig { seed, ..SynthConfig::default() }, dir).unwrap();
    let mut raw: serde_json::Value = serde_json::from_slice(&std::fs::read(&out.config_path).unwrap()).unwrap();
    raw["bootstrap"]["replicates"] = 25.into();
    raw["bootstrap"]["threads"] = 2.into();
    std::fs::write(&out.config_path, serde_json::to_vec_pretty(&raw).unwrap()).unwrap();
    RunConfig::load(&out.config_path).unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn run_all_reuses_unchanged_stages_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = project(dir.path(), 3);
    let first = run_all(&cfg, false).unwrap();
    assert_eq!(first.stages.len(), 6);
    let l = Layout::new(&cfg.output);

    let table = read(&l.infer.join("table.csv"));
    let header = table.lines().next().unwrap();
    assert_eq!(header, "block,term,row,m1,m2,m3,m4,m5,m6");
    assert!(table.lines().any(|r| r.contains(",AIC,")));
    assert!(table.lines().any(|r| r.contains(",BIC,")));

    let second = run_all(&cfg, false).unwrap();
    assert_eq!(second.recomputed(), 0, "{:?}", second.stages);

    let outputs = [
        l.infer.join("table.csv"),
        l.infer.join("margins.csv"),
        l.project.join("trajectories.csv"),
        l.bootstrap.join("quantiles.csv"),
    ];
    let before: Vec<String> = outputs.iter().map(|p| read(p)).collect();
    let forced = run_all(&cfg, true).unwrap();
    assert_eq!(forced.recomputed(), 6);
    for (p, b) in outputs.iter().zip(&before) {
        assert_eq!(&read(p), b, "{} changed on rerun", p.display());
    }
}

#[test]
fn changing_one_stage_setting_reruns_only_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = project(dir.path(), 4);
    run_all(&cfg, false).unwrap();
    let ran = |cfg: &RunConfig| -> Vec<String> {
        run_all(cfg, false).unwrap().stages.into_iter().filter(|(_, r)| *r).map(|(n, _)| n).collect()
    };
    cfg.plotdata = false;
    assert_eq!(ran(&cfg), ["project"]);
    // the bootstrap projects to the horizon too
    cfg.horizon = 2045;
    assert_eq!(ran(&cfg), ["project", "bootstrap"]);
    cfg.averaging = panelclim::infer::AmeAveraging::ProvinceThenPooled;
    assert_eq!(ran(&cfg), ["infer"]);
}

#[test]
fn failed_stage_leaves_a_marker_until_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = project(dir.path(), 5);
    run_all(&cfg, false).unwrap();
    let econ = cfg.inputs.econ.clone();
    let good = read(&econ);
    std::fs::write(&econ, format!("{good}ON,2001,TOTAL,not-a-number,1\n")).unwrap();
    let err = run_all(&cfg, false).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let marker = Layout::new(&cfg.output).store.join(FAILED_MARKER);
    assert!(marker.exists());

    std::fs::write(&econ, good).unwrap();
    let s = run_all(&cfg, false).unwrap();
    assert!(!marker.exists());
    assert_eq!(s.stages[0], ("ingest".to_string(), true));
    assert_eq!(s.recomputed(), 1, "{:?}", s.stages);
}

fn cli(args: &[&str], envs: &[(&str, &str)]) -> (i32, String) {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("PANELCLIM_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn command_line_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("proj");
    let root_s = root.to_str().unwrap();
    assert_eq!(cli(&["synth", "--out", root_s], &[]).0, 0);
    let store = root.join("store");
    let store_s = store.to_str().unwrap();

    let fit_path = dir.path().join("fit_m1.json");
    let fit_s = fit_path.to_str().unwrap();
    let (code, err) = cli(&["fit", "--store", store_s, "--spec", "m1", "--out", fit_s], &[]);
    assert_eq!(code, 0, "{err}");
    assert!(fit_path.exists());

    let traj = dir.path().join("traj.csv");
    let (code, err) = cli(
        &["project", "--fit", fit_s, "--store", store_s, "--scenario", "rcp26,rcp85", "--out", traj.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 0, "{err}");
    let rows = read(&traj).lines().count();
    assert_eq!(rows, 1 + 2 * 10 * 34);

    let bad = dir.path().join("fit_bad.json");
    assert_eq!(cli(&["fit", "--store", store_s, "--spec", "m9", "--out", bad.to_str().unwrap()], &[]).0, 2);
    assert_eq!(
        cli(&["fit", "--store", store_s, "--spec", "m1", "--out", bad.to_str().unwrap()], &[("PANELCLIM_THREADS", "0")]).0,
        2
    );
    let missing = dir.path().join("nowhere");
    assert_eq!(cli(&["fit", "--store", missing.to_str().unwrap(), "--spec", "m1", "--out", bad.to_str().unwrap()], &[]).0, 3);

    let boot = dir.path().join("boot");
    let (code, err) = cli(
        &["bootstrap", "--store", store_s, "--spec", "m1", "--reps", "10", "--out", boot.to_str().unwrap()],
        &[("PANELCLIM_THREADS", "2")],
    );
    assert_eq!(code, 0, "{err}");
    let q1 = read(&boot.join("quantiles.csv"));
    let (code, _) = cli(
        &["--threads", "1", "bootstrap", "--store", store_s, "--spec", "m1", "--reps", "10", "--out", boot.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 0);
    assert_eq!(q1, read(&boot.join("quantiles.csv")));
}
