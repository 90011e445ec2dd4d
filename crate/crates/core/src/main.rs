use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use panelclim::boot::BootstrapSettings;
use panelclim::features::{Weighting, WinterConvention};
use panelclim::infer::AmeAveraging;
use panelclim::ingest::Schema;
use panelclim::pipeline::{self as pl, FitRecord, RawPaths, RunConfig, SpecEntry};
use panelclim::project::Anchoring;
use panelclim::store::{load_stage2, Stage2};
use panelclim::textio::{read_json, write_json};
use panelclim::types::Scenario;
use panelclim::{Error, Result};

#[derive(Parser)]
#[command(name = "panelclim", version, about = "Climate anomaly panels, mixed-effects growth models and impact projections")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "PANELCLIM_THREADS")]
    threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, validate and screen raw inputs into a store.
    Ingest(IngestArgs),
    /// Build anomaly, growth and index tables in a store.
    Features(FeaturesArgs),
    /// Fit one or more model specifications.
    Fit(FitArgs),
    /// Robust inference, marginal effects and the comparison table.
    Infer(InferArgs),
    /// Project impact trajectories under climate scenarios.
    Project(ProjectArgs),
    /// Province block bootstrap of projected trajectories.
    Bootstrap(BootstrapArgs),
    /// Generate a synthetic project with known parameters.
    Synth(SynthArgs),
    /// Run every stage from a run config, reusing unchanged stages.
    RunAll(RunAllArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    stations: PathBuf,
    #[arg(long)]
    econ: PathBuf,
    #[arg(long)]
    indices: PathBuf,
    /// Defaults to the bundled event list.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    rcp: PathBuf,
    /// JSON column map.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Years counted for station coverage, e.g. 1998:2017.
    #[arg(long, default_value = "1998:2017")]
    coverage_period: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "1998:2017")]
    baseline: String,
    #[arg(long, default_value = "unweighted")]
    weighting: String,
    /// Winter of year t = Jan, Feb and Dec of t.
    #[arg(long)]
    winter_same_year: bool,
    /// Defaults to the input store.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "TOTAL")]
    sector: String,
    /// Preset names (comma separated) or one inline JSON spec.
    #[arg(long, default_value = "m5")]
    spec: String,
    #[arg(long, default_value = "1998:2017")]
    years: String,
    /// A .json file for a single spec, otherwise a directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    fit: Vec<PathBuf>,
    #[arg(long, default_value = "pooled")]
    averaging: String,
    /// A directory, or the table and margins file paths.
    #[arg(long, num_args = 1..=2, required = true)]
    out: Vec<PathBuf>,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    store: PathBuf,
    /// Delta table overriding the store's copy.
    #[arg(long)]
    rcp: Option<PathBuf>,
    /// Comma separated, e.g. rcp26,rcp45.
    #[arg(long, default_value = "rcp45")]
    scenario: String,
    #[arg(long, default_value = "endpoint")]
    anchoring: String,
    #[arg(long, default_value = "1998:2017")]
    baseline: String,
    #[arg(long, default_value_t = panelclim::project::DEFAULT_HORIZON)]
    horizon: i32,
    /// Also write plot-ready series next to the trajectories.
    #[arg(long)]
    plotdata: bool,
    /// A .csv file or a directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BootstrapArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "m5")]
    spec: String,
    #[arg(long, default_value = "TOTAL")]
    sector: String,
    #[arg(long, default_value = "1998:2017")]
    years: String,
    #[arg(long, default_value = "rcp45")]
    scenario: String,
    #[arg(long, default_value = "endpoint")]
    anchoring: String,
    #[arg(long, default_value_t = panelclim::boot::DEFAULT_REPLICATES)]
    reps: usize,
    #[arg(long, default_value_t = 20170101)]
    seed: u64,
    #[arg(long, default_value_t = panelclim::project::DEFAULT_HORIZON)]
    horizon: i32,
    /// Also write the per-replicate coefficient table.
    #[arg(long)]
    coefficients: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON synthetic-data config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunAllArgs {
    #[arg(long)]
    config: PathBuf,
    /// Recompute every stage.
    #[arg(long)]
    force: bool,
}

fn scenarios(s: &str) -> Result<Vec<Scenario>> {
    s.split(',').map(|t| t.trim().parse()).collect()
}

fn cfg_json<T: serde::Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn dir_of(p: &Path) -> PathBuf {
    p.parent().filter(|d| !d.as_os_str().is_empty()).map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn file_name(p: &Path) -> Result<String> {
    p.file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Config(format!("'{}' is not a file path", p.display())))
}

fn is_file_path(p: &Path, ext: &str) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn threads(cli: Option<usize>) -> Result<usize> {
    match cli {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => Ok(n),
        None => Ok(1),
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = threads(cli.threads)?;
    match cli.command {
        Command::Ingest(a) => {
            let schema: Schema = match &a.schema {
                Some(p) => read_json(p).map_err(|e| Error::Config(format!("schema {}: {e}", p.display())))?,
                None => Schema::default(),
            };
            let cfg = RunConfig {
                inputs: RawPaths { stations: a.stations, econ: a.econ, indices: a.indices, events: a.events, rcp: a.rcp },
                schema,
                coverage_period: Some(pl::parse_year_range(&a.coverage_period)?),
                ..RunConfig::default()
            };
            cfg.validate()?;
            pl::ingest_stage(&cfg, &a.out, true)?;
        }
        Command::Features(a) => {
            let cfg = RunConfig {
                baseline: pl::parse_year_range(&a.baseline)?,
                weighting: a.weighting.parse::<Weighting>()?,
                winter: if a.winter_same_year { WinterConvention::SameYear } else { WinterConvention::PrecedingDecember },
                ..RunConfig::default()
            };
            cfg.validate()?;
            let out = a.out.unwrap_or_else(|| a.store.clone());
            if out != a.store {
                copy_stage1(&a.store, &out)?;
            }
            pl::features_stage(&cfg, &out, true)?;
        }
        Command::Fit(a) => {
            let entries: Vec<SpecEntry> = if a.spec.trim_start().starts_with('{') {
                let spec = panelclim::panel::parse_spec(&a.spec)?;
                vec![SpecEntry::Inline { name: "custom".into(), spec }]
            } else {
                a.spec.split(',').map(|s| SpecEntry::Preset(s.trim().to_string())).collect()
            };
            let years = pl::parse_year_range(&a.years)?;
            let s2 = load_stage2(&a.store)?;
            let single = entries.len() == 1 && is_file_path(&a.out, "json");
            for e in &entries {
                let (name, spec) = e.resolve()?;
                let rec = pl::fit_model(&s2, &name, &spec, &a.sector, years)?;
                let path = if single { a.out.clone() } else { a.out.join(pl::fit_file_name(&name)) };
                write_json(&path, &rec)?;
                log::info!("{name}: wrote {}", path.display());
            }
        }
        Command::Infer(a) => {
            let averaging: AmeAveraging = a.averaging.parse()?;
            let s2 = load_stage2(&a.store)?;
            let fits: Vec<FitRecord> = a.fit.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
            let (dir, names) = match a.out.as_slice() {
                [d] if !is_file_path(d, "csv") => (d.clone(), ("table.csv".to_string(), "margins.csv".to_string())),
                [t] => (dir_of(t), (file_name(t)?, "margins.csv".to_string())),
                [t, m] => {
                    if dir_of(t) != dir_of(m) {
                        return Err(Error::Config("table and margins outputs must share a directory".into()));
                    }
                    (dir_of(t), (file_name(t)?, file_name(m)?))
                }
                _ => unreachable!("clap enforces 1..=2 values"),
            };
            let config = cfg_json(&serde_json::json!({ "fits": a.fit, "averaging": averaging }))?;
            pl::run_standalone(&dir, "infer_manifest.json", "infer", config, |m| {
                pl::write_inference(&s2, &fits, averaging, &dir, (&names.0, &names.1), m)
            })?;
        }
        Command::Project(a) => {
            let rec: FitRecord = read_json(&a.fit)?;
            let s2 = with_rcp(load_stage2(&a.store)?, a.rcp.as_deref())?;
            let scen = scenarios(&a.scenario)?;
            let anchoring: Anchoring = a.anchoring.parse()?;
            let baseline = pl::parse_year_range(&a.baseline)?;
            let (dir, traj) = if is_file_path(&a.out, "csv") {
                (dir_of(&a.out), file_name(&a.out)?)
            } else {
                (a.out.clone(), "trajectories.csv".to_string())
            };
            let config = cfg_json(&serde_json::json!({
                "fit": a.fit, "scenarios": scen, "anchoring": anchoring, "baseline": baseline, "horizon": a.horizon,
            }))?;
            pl::run_standalone(&dir, "project_manifest.json", "project", config, |m| {
                let (paths, trajs) = pl::project_fit(&s2, &rec, &scen, anchoring, baseline, a.horizon)?;
                pl::write_projection(&paths, &trajs, a.plotdata, &dir, &traj, m)
            })?;
        }
        Command::Bootstrap(a) => {
            let s2 = load_stage2(&a.store)?;
            let (name, spec) = SpecEntry::Preset(a.spec.clone()).resolve()?;
            let years = pl::parse_year_range(&a.years)?;
            let scen = scenarios(&a.scenario)?;
            let anchoring: Anchoring = a.anchoring.parse()?;
            let settings = BootstrapSettings {
                replicates: a.reps,
                seed: a.seed,
                threads,
                baseline_years: (1998, 2017),
                horizon: a.horizon,
            };
            let config = cfg_json(&serde_json::json!({
                "spec": name, "sector": a.sector, "years": years, "scenarios": scen,
                "anchoring": anchoring, "replicates": a.reps, "seed": a.seed, "horizon": a.horizon,
            }))?;
            pl::run_standalone(&a.out, pl::STAGE_MANIFEST, "bootstrap", config, |m| {
                let runs = scen
                    .iter()
                    .map(|&s| Ok((name.clone(), pl::bootstrap_model(&s2, &spec, &a.sector, years, s, anchoring, &settings)?)))
                    .collect::<Result<Vec<_>>>()?;
                pl::write_bootstrap(&runs, a.coefficients, &a.out, m)
            })?;
        }
        Command::Synth(a) => {
            let config: panelclim::synth::SynthConfig = match &a.config {
                Some(p) => read_json(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
                None => Default::default(),
            };
            let out = pl::synth_stage(&config, &a.out)?;
            println!("{}", out.config_path.display());
        }
        Command::RunAll(a) => {
            let mut cfg = RunConfig::load(&a.config)?;
            if cli.threads.is_some() {
                cfg.bootstrap.threads = threads;
            }
            let summary = pl::run_all(&cfg, a.force)?;
            for (stage, ran) in &summary.stages {
                println!("{stage}: {}", if *ran { "ran" } else { "up to date" });
            }
        }
    }
    Ok(())
}

fn with_rcp(mut s2: Stage2, rcp: Option<&Path>) -> Result<Stage2> {
    if let Some(p) = rcp {
        s2.rcp = panelclim::ingest::load_rcp(p, &Schema::default())?;
    }
    Ok(s2)
}

fn copy_stage1(from: &Path, to: &Path) -> Result<()> {
    use panelclim::store as st;
    std::fs::create_dir_all(to).map_err(|e| Error::io(to, e))?;
    for name in [st::STATIONS, st::COVERAGE, st::ECON, st::INDICES, st::EVENTS, st::RCP, st::INGEST_MANIFEST] {
        std::fs::copy(from.join(name), to.join(name)).map_err(|e| Error::io(from.join(name), e))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
