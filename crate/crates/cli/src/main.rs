//! `causal-drf` command-line interface: fit a model from CSV, evaluate its
//! witness band or H0 test at a covariate point, and run simulation studies.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use causal_drf::inference::{default_grid, DEFAULT_GRID_SIZE};
use causal_drf::io::{load_csv, load_model, read_grid, save_model, write_band_csv, write_study_csv, DataSchema, ModelFile};
use causal_drf::{confidence_band, h0_test, run_study, CausalDrfModel, ForestConfig, Method, SimulationRegime, WeightModel};
use clap::{Args, Parser, Subcommand};

/// Exit status of `test` when H0 is rejected.
const EXIT_REJECT: u8 = 3;

/// Environment variable capping the worker thread count.
const THREADS_ENV: &str = "CAUSAL_DRF_THREADS";

#[derive(Parser)]
#[command(name = "causal-drf", version, about = "Distributional treatment effects with honest random forests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a forest to a CSV dataset and save the model.
    Fit(FitArgs),
    /// Write the witness function and its confidence band at a point as CSV.
    Witness(WitnessArgs),
    /// Test equality of the treated and control outcome laws at a point.
    Test(TestArgs),
    /// Run a simulation study and write the summary table.
    Simulate(SimulateArgs),
}

/// Flags overriding fields of the forest configuration.
#[derive(Args)]
struct ConfigOverrides {
    /// Total number of trees N.
    #[arg(long)]
    num_trees: Option<usize>,
    /// Number of half-sample groups B.
    #[arg(long)]
    num_groups: Option<usize>,
    /// Minimum leaf size per treatment arm.
    #[arg(long)]
    kappa: Option<usize>,
    /// Candidate features per split.
    #[arg(long)]
    mtry: Option<usize>,
    /// Random Fourier features per tree.
    #[arg(long)]
    fourier_features: Option<usize>,
}

impl ConfigOverrides {
    fn apply(&self, mut config: ForestConfig) -> ForestConfig {
        if let Some(v) = self.num_trees {
            config.num_trees = v;
        }
        if let Some(v) = self.num_groups {
            config.num_groups = v;
        }
        if let Some(v) = self.kappa {
            config.min_leaf_per_arm = v;
        }
        if let Some(v) = self.mtry {
            config.mtry = Some(v);
        }
        if let Some(v) = self.fourier_features {
            config.fourier_features = v;
        }
        config
    }
}

#[derive(Args)]
struct FitArgs {
    /// Training data CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// JSON data schema naming the covariate, treatment and outcome columns.
    #[arg(long)]
    schema: PathBuf,
    /// JSON forest configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the model.
    #[arg(long)]
    out: PathBuf,
    /// Seed of the fit, overriding the configuration's.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct WitnessArgs {
    #[arg(long)]
    model: PathBuf,
    /// Covariate point as comma-separated values.
    #[arg(long)]
    point: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Points of the default grid over the training outcome range.
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    grid_size: usize,
    /// CSV of outcome points (one column per outcome), replacing the default grid.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    model: PathBuf,
    /// Covariate point as comma-separated values.
    #[arg(long)]
    point: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Regime 1-4 or motivational example m1-m4.
    #[arg(long)]
    regime: SimulationRegime,
    /// Sample size per replication.
    #[arg(long)]
    n: usize,
    /// Replications; 100 by default, 500 with --paper-scale.
    #[arg(long)]
    sims: Option<usize>,
    /// `causal` or `two-drf`.
    #[arg(long, default_value = "causal")]
    method: Method,
    /// Master seed; replication `r` derives its seeds from (seed, r).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use 2500 trees and 500 replications instead of 1000 and 100.
    #[arg(long)]
    paper_scale: bool,
    /// JSON forest configuration replacing the scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Record wall-clock time in the metadata file (which makes it run-dependent).
    #[arg(long)]
    timings: bool,
    /// Output CSV; metadata goes to the same path with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Fit(args) => fit(args),
        Command::Witness(args) => witness(args),
        Command::Test(args) => test(args),
        Command::Simulate(args) => simulate(args),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<ForestConfig> {
    path.map_or_else(|| Ok(ForestConfig::default()), read_json)
}

fn fit(args: FitArgs) -> Result<ExitCode> {
    let schema: DataSchema = read_json(&args.schema)?;
    let mut config = args.overrides.apply(load_config(args.config.as_deref())?);
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let loaded = load_csv(&args.data, &schema).with_context(|| format!("loading {}", args.data.display()))?;
    let model = CausalDrfModel::fit(&loaded.dataset, &config)?;
    let file = ModelFile { model, outcome_scaling: loaded.outcome_scaling };
    save_model(&file, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn parse_point(text: &str, p: usize) -> Result<Vec<f64>> {
    let point = text
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad coordinate `{v}` in --point")))
        .collect::<Result<Vec<_>>>()?;
    if point.len() != p {
        bail!("--point has {} coordinates but the model has {p} covariates", point.len());
    }
    Ok(point)
}

fn warn_small_b(model: &CausalDrfModel, alpha: f64) {
    let b = model.groups().len();
    if (b as f64) * alpha < 1.0 {
        eprintln!("warning: {b} groups at alpha = {alpha} leave fewer than one draw above the quantile");
    }
}

fn witness(args: WitnessArgs) -> Result<ExitCode> {
    let file = load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let model = &file.model;
    let x = parse_point(&args.point, model.dataset().p())?;
    warn_small_b(model, args.alpha);
    let grid = match &args.grid {
        Some(path) => {
            let mut grid = read_grid(File::open(path).with_context(|| format!("opening {}", path.display()))?)?;
            if let Some(scaling) = &file.outcome_scaling {
                for i in 0..grid.rows() {
                    for (v, s) in grid.row_mut(i).iter_mut().zip(scaling) {
                        *v = s.forward(*v);
                    }
                }
            }
            grid
        }
        None => default_grid(model.dataset().y(), args.grid_size)?,
    };
    let band = confidence_band(model, &x, &grid, args.alpha)?;
    let scaling = file.outcome_scaling.as_deref();
    match &args.out {
        Some(path) => {
            let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
            write_band_csv(&band, scaling, &mut out)?;
            out.flush()?;
        }
        None => write_band_csv(&band, scaling, io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn test(args: TestArgs) -> Result<ExitCode> {
    let file = load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let x = parse_point(&args.point, file.model.dataset().p())?;
    warn_small_b(&file.model, args.alpha);
    let result = h0_test(&file.model, &x, args.alpha)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(if result.reject { ExitCode::from(EXIT_REJECT) } else { ExitCode::SUCCESS })
}

fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let (trees, sims) = if args.paper_scale { (2500, 500) } else { (1000, 100) };
    let base = match &args.config {
        Some(path) => read_json(path)?,
        None => ForestConfig { num_trees: trees, num_groups: 50, ..ForestConfig::default() },
    };
    let config = ForestConfig { seed: args.seed, ..args.overrides.apply(base) };
    let sims = args.sims.unwrap_or(sims);
    let start = Instant::now();
    let report = run_study(args.regime, args.n, sims, args.method, &config, args.seed)?;
    let elapsed = start.elapsed().as_secs_f64();

    let mut out = BufWriter::new(File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?);
    write_study_csv(std::slice::from_ref(&report), &mut out)?;
    out.flush()?;

    let mut meta = serde_json::json!({
        "regime": report.regime,
        "n": report.n,
        "n_sims": report.n_sims,
        "method": report.method,
        "seed": report.seed,
        "config": config,
        "mae_mean": report.mae_mean,
        "mae_sd": report.mae_sd,
        "coverage_rate": report.coverage_rate,
        "coverage_se": report.coverage_se,
        "rejection_rate": report.rejection_rate,
        "alpha": report.alpha,
        "replications": report.replications,
    });
    if args.timings {
        meta["runtime_secs"] = serde_json::json!(elapsed);
    }
    let meta_path = args.out.with_extension("json");
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(&meta_path, text).with_context(|| format!("writing {}", meta_path.display()))?;
    Ok(ExitCode::SUCCESS)
}
