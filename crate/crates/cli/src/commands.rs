//! Argument parsing and the subcommands of `elwqr`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use elwqr_core::estimators::{fit_with, ElwOptions};
use elwqr_core::inference::{
    block_identity_details, bootstrap_se_with, plugin_components, theta_from_fit, Bandwidth,
};
use elwqr_core::simgen::{generate_dataset, monte_carlo, McConfig, McRow, SimDesign};
use elwqr_core::{Estimator, QuantileLevel};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use serde_json::json;

use crate::config::{read_config, AnalysisConfig, DataConfig, Provenance, SimulateConfig, OUT_DIR_ENV};
use crate::error::{CliError, CliResult};
use crate::fixture::{survey_like, write_survey, SURVEY_ROWS};
use crate::io::{load_csv, write_dataset, ColumnSpec, Loaded};
use crate::report::{run_analysis, write_json, write_long_csv, write_table_csv};

#[derive(Debug, Parser)]
#[command(name = "elwqr", version, about = "Quantile regression with covariates missing not at random")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed for simulation and resampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Quantile level in (0, 1).
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Output directory (`generate` and `fixture`: output file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo bias/RMSE table from a simulation config.
    Simulate,
    /// Fit one estimator and print the result as JSON.
    Fit(FitArgs),
    /// Pairs-bootstrap standard errors.
    Bootstrap {
        #[command(flatten)]
        fit: FitArgs,
        /// Number of bootstrap replicates.
        #[arg(long, default_value_t = crate::config::DEFAULT_BOOTSTRAP_B)]
        b: usize,
    },
    /// Coefficients and standard errors over a grid of quantile levels.
    Analyze,
    /// EL diagnostics, plug-in covariances and the block identity on a dataset.
    Check {
        #[command(flatten)]
        data: DataArgs,
        /// Kernel bandwidth for the residual density (default: automatic).
        #[arg(long)]
        bandwidth: Option<f64>,
    },
    /// Draw a dataset from the conditional-Gaussian simulation design.
    Generate {
        #[arg(long, default_value_t = 300)]
        n: usize,
    },
    /// Write a synthetic survey-style dataset with MNAR alcohol intake.
    Fixture {
        #[arg(long, default_value_t = SURVEY_ROWS)]
        n: usize,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Input CSV file.
    data: PathBuf,
    /// Response column.
    #[arg(long, default_value = "y")]
    response: String,
    /// Columns that may be missing (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "x")]
    x: Vec<String>,
    /// Always-observed columns (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "z")]
    z: Vec<String>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// One of cca, ipw_mar, elw.
    #[arg(long, default_value = "elw")]
    estimator: Estimator,
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let globals = Globals {
        seed: cli.seed,
        tau: cli.tau,
        out: cli.out,
        config: cli.config,
    };
    match cli.command {
        Command::Simulate => simulate(&globals),
        Command::Fit(args) => fit(&globals, &args),
        Command::Bootstrap { fit, b } => bootstrap(&globals, &fit, b),
        Command::Analyze => analyze(&globals),
        Command::Check { data, bandwidth } => check(&globals, &data, bandwidth),
        Command::Generate { n } => generate(&globals, n),
        Command::Fixture { n } => fixture(&globals, n),
    }
}

struct Globals {
    seed: Option<u64>,
    tau: Option<f64>,
    out: Option<PathBuf>,
    config: Option<PathBuf>,
}

impl Globals {
    fn tau(&self) -> CliResult<QuantileLevel> {
        Ok(QuantileLevel::new(self.tau.unwrap_or(0.5))?)
    }

    /// `--out`, then the config's directory, then the environment, then `.`.
    fn out_dir(&self, from_config: Option<&Path>) -> CliResult<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| from_config.map(Path::to_path_buf))
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::validation(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }

    fn require_config(&self) -> CliResult<&Path> {
        self.config
            .as_deref()
            .ok_or_else(|| CliError::validation("this command needs --config"))
    }
}

fn emit(value: &impl Serialize) -> CliResult<()> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    serde_json::to_writer_pretty(&mut lock, value)?;
    writeln!(lock)?;
    Ok(())
}

fn simulate(g: &Globals) -> CliResult<()> {
    let mut cfg: SimulateConfig = read_config(g.require_config()?)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let provenance = Provenance::new(cfg.seed, &cfg);
    let mut rows: Vec<McRow> = Vec::new();
    for &tau in &cfg.taus {
        for &n in &cfg.ns {
            let mc = McConfig {
                n,
                tau,
                reps: cfg.reps,
                estimators: cfg.estimators.clone(),
                seed: cfg.seed,
                elw: ElwOptions { basis: cfg.basis },
            };
            rows.extend(monte_carlo(&cfg.design, &mc)?);
        }
    }
    let path = g.out_dir(None)?.join("table1.csv");
    write_table_csv(&path, &rows, &provenance)?;
    println!("{}", path.display());
    Ok(())
}

/// Loads a dataset using `--config` columns if given, else the column flags.
fn load(g: &Globals, args: &DataArgs) -> CliResult<(Loaded, ColumnSpec, ElwOptions)> {
    let (spec, basis) = match &g.config {
        Some(path) => {
            let cfg: DataConfig = read_config(path)?;
            (cfg.columns, cfg.basis)
        }
        None => (
            ColumnSpec {
                response: args.response.clone(),
                always_observed: args.z.clone(),
                missing_covariates: args.x.clone(),
                transforms: Vec::new(),
            },
            Default::default(),
        ),
    };
    let loaded = load_csv(&args.data, &spec)?;
    if !loaded.rejected_rows.is_empty() {
        eprintln!(
            "warning: {} rows rejected for missing response or always-observed values",
            loaded.rejected_rows.len()
        );
    }
    Ok((loaded, spec, ElwOptions { basis }))
}

fn fit(g: &Globals, args: &FitArgs) -> CliResult<()> {
    let tau = g.tau()?;
    let (loaded, spec, options) = load(g, &args.data)?;
    let result = fit_with(&loaded.dataset, tau, args.estimator, &options)?;
    let settings = json!({ "columns": spec, "tau": tau, "estimator": args.estimator, "options": options });
    let doc = json!({
        "provenance": Provenance::new(g.seed.unwrap_or(0), &settings),
        "coefficients": spec.coefficient_names(),
        "rejected_rows": loaded.rejected_rows,
        "fit": result,
    });
    if g.out.is_some() {
        write_json(&g.out_dir(None)?.join("fit.json"), &doc)?;
    }
    emit(&doc)
}

fn bootstrap(g: &Globals, args: &FitArgs, b: usize) -> CliResult<()> {
    let tau = g.tau()?;
    let seed = g.seed.unwrap_or(0);
    let (loaded, spec, options) = load(g, &args.data)?;
    let result = bootstrap_se_with(&loaded.dataset, tau, args.estimator, b, seed, &options)?;
    let settings = json!({ "columns": spec, "tau": tau, "estimator": args.estimator, "b": b, "options": options });
    let doc = json!({
        "provenance": Provenance::new(seed, &settings),
        "coefficients": spec.coefficient_names(),
        "bootstrap": result,
    });
    if g.out.is_some() {
        write_json(&g.out_dir(None)?.join("bootstrap.json"), &doc)?;
    }
    emit(&doc)
}

fn analyze(g: &Globals) -> CliResult<()> {
    let path = g.require_config()?;
    let mut cfg: AnalysisConfig = read_config(path)?;
    if let Some(seed) = g.seed {
        cfg.run.seed = seed;
    }
    if let Some(tau) = g.tau {
        cfg.run.tau_grid = vec![QuantileLevel::new(tau)?];
    }
    cfg.run.validate()?;
    let data_path = match path.parent() {
        Some(dir) if cfg.data.is_relative() => dir.join(&cfg.data),
        _ => cfg.data.clone(),
    };
    let loaded = load_csv(&data_path, &cfg.columns)?;
    let names = cfg.columns.coefficient_names();
    let report = run_analysis(&loaded.dataset, &names, &cfg.run)?;

    let provenance = Provenance::new(cfg.run.seed, &cfg);
    let dir = g.out_dir(cfg.run.output_dir.as_deref())?;
    write_long_csv(&dir.join("coefficients.csv"), &report.coefficients, &provenance)?;
    write_long_csv(&dir.join("se.csv"), &report.se, &provenance)?;
    let summary = json!({
        "provenance": provenance,
        "n": loaded.dataset.len(),
        "missing_rate": loaded.dataset.missing_rate(),
        "rejected_rows": loaded.rejected_rows,
        "failures": report.failures,
    });
    write_json(&dir.join("run.json"), &summary)?;
    for f in &report.failures {
        eprintln!("warning: tau={} {} {} failed: {}", f.tau, f.estimator, f.step, f.message);
    }
    println!("{}", dir.display());
    Ok(())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn check(g: &Globals, args: &DataArgs, bandwidth: Option<f64>) -> CliResult<()> {
    let tau = g.tau()?;
    let (loaded, spec, options) = load(g, args)?;
    let data = &loaded.dataset;
    let fit = fit_with(data, tau, Estimator::Elw, &options)?;
    let el = fit.el.as_ref().expect("ELW fits carry diagnostics");
    let theta = theta_from_fit(&fit)?;
    let bw = bandwidth.map_or(Bandwidth::Auto, Bandwidth::Fixed);
    let comps = plugin_components(data, &theta, tau, bw)?;
    let block = block_identity_details(&comps)?;
    let gap = SymmetricEigen::new(&comps.sigma_c - &comps.sigma_elw).eigenvalues.min();
    let settings = json!({ "columns": spec, "tau": tau, "bandwidth": bw, "options": options });
    let doc = json!({
        "provenance": Provenance::new(g.seed.unwrap_or(0), &settings),
        "coefficients": spec.coefficient_names(),
        "beta_elw": fit.beta_hat,
        "el": {
            "status": el.status,
            "constraint_residual": el.constraint_residual,
            "weight_sum_error": (el.weights.iter().sum::<f64>() - 1.0).abs(),
            "min_denominator": el.min_denominator,
            "iterations": el.iterations,
            "rank": el.rank,
        },
        "bandwidth": comps.bandwidth,
        "block_identity": {
            "residual": block.residual(),
            "top_left": block.top_left,
            "bottom_right": block.bottom_right,
        },
        "min_eigenvalue_sigma_c_minus_sigma_elw": gap,
        "sigma_c": rows(&comps.sigma_c),
        "sigma_elw": rows(&comps.sigma_elw),
    });
    if g.out.is_some() {
        write_json(&g.out_dir(None)?.join("check.json"), &doc)?;
    }
    emit(&doc)
}

fn open_output(g: &Globals) -> CliResult<Box<dyn Write>> {
    match &g.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Ok(Box::new(std::io::BufWriter::new(std::fs::File::create(path)?)))
        }
        None => Ok(Box::new(std::io::stdout())),
    }
}

fn generate(g: &Globals, n: usize) -> CliResult<()> {
    let design: SimDesign = match &g.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => SimDesign::default(),
    };
    let seed = g.seed.unwrap_or(0);
    let data = generate_dataset(&design, n, seed)?;
    let provenance = Provenance::new(seed, &json!({ "design": design, "n": n }));
    write_dataset(open_output(g)?, &data, &ColumnSpec::generic(1, 1), &[provenance.comment()])
}

fn fixture(g: &Globals, n: usize) -> CliResult<()> {
    let seed = g.seed.unwrap_or(0);
    let provenance = Provenance::new(seed, &json!({ "fixture": "survey", "n": n }));
    write_survey(open_output(g)?, &survey_like(n, seed), &[provenance.comment()])
}
