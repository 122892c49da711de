//! `spatconv`: batch front end for the spatial convergence pipeline.
//!
//! Log verbosity is read from `SPATCONV_LOG` (default `warn`); logs go to
//! stderr and reports to stdout or `--out`.

mod commands;
mod config;
mod error;
mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spatconv::data::{CovariateSet, GrowthForm, Variable};
use spatconv::unitroot::{Deterministic, LagChoice};

use config::{Campaign, KeyValues, Options, SchemaKind};
use error::{CliError, CliResult};
use table::{Format, Report};

#[derive(Parser)]
#[command(name = "spatconv", version, about = "Spatial panel analysis of carbon-intensity convergence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the trade-flow weight matrix and its connectivity graph.
    Weights(DataArgs),
    /// Moran's I and Geary's C of carbon-intensity growth.
    Autocorr(AutocorrArgs),
    /// Estimate FE/RE/SAR/SEM/SDM panels with Wald, Hausman and LR tests.
    Fit(ModelArgs),
    /// Direct, indirect and total effects with convergence rates.
    Effects(ModelArgs),
    /// Monte Carlo campaign from a key-value config.
    Simulate(SimulateArgs),
    /// LLC panel unit-root tests of every variable in logs.
    Unitroot(UnitrootArgs),
    /// Run every stage from a key-value run configuration.
    Report(ReportArgs),
}

#[derive(Args)]
struct OutputArgs {
    /// Directory for report and matrix files; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text", global = true)]
    format: Format,
}

#[derive(Args)]
struct DataArgs {
    /// Country-year panel CSV.
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Panel columns: precomputed `indicators` or `raw` measurements.
    #[arg(long, default_value = "indicators", value_parser = config::parse_schema)]
    schema: SchemaKind,
    /// Reject unbalanced panels instead of dropping incomplete countries.
    #[arg(long)]
    strict: bool,
    /// Year window, e.g. 1997-2014.
    #[arg(long, value_parser = config::parse_years)]
    years: Option<(i32, i32)>,
    /// Bilateral flow CSV (origin,dest,year,value).
    #[arg(long, conflicts_with = "weights")]
    flows: Option<PathBuf>,
    /// Labelled weight matrix CSV.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct AutocorrArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Permutation replications (0 disables permutation inference).
    #[arg(long, default_value_t = 0)]
    permutations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// log-ratio or mean-annual.
    #[arg(long, default_value = "log-ratio", value_parser = config::parse_growth)]
    growth: GrowthForm,
}

#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    data: DataArgs,
    /// block1..block4 or custom:Y,EI,...; repeat the flag or separate with `;`.
    #[arg(long, default_value = "block1")]
    covariates: Vec<String>,
    #[arg(long, default_value = "fe,sar,sem,sdm")]
    models: String,
    /// Variables whose lagged log enters the SDM with a W-lag.
    #[arg(long, default_value = "GVC")]
    lagged: String,
    /// Simulation draws for effect inference (0: point estimates only).
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct UnitrootArgs {
    #[command(flatten)]
    data: DataArgs,
    /// auto, schwarz or a fixed count.
    #[arg(long, default_value = "auto", value_parser = config::parse_lags)]
    lags: LagChoice,
    /// none, intercept or trend.
    #[arg(long, default_value = "intercept", value_parser = config::parse_deterministic)]
    deterministic: Deterministic,
}

#[derive(Args)]
struct SimulateArgs {
    /// Campaign config; the bundled default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `reps` from the config.
    #[arg(long)]
    reps: Option<usize>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Run configuration with keys matching the stage flags.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

impl DataArgs {
    fn options(&self) -> Options {
        Options {
            panel: self.panel.clone(),
            schema: self.schema,
            strict: self.strict,
            years: self.years,
            flows: self.flows.clone(),
            weights: self.weights.clone(),
            ..Options::default()
        }
    }
}

impl ModelArgs {
    fn options(&self) -> CliResult<Options> {
        let mut covariates: Vec<CovariateSet> = Vec::new();
        for c in &self.covariates {
            covariates.extend(config::parse_covariates(c)?);
        }
        let lagged: Vec<Variable> = config::parse_variables(&self.lagged)?;
        Ok(Options {
            covariates,
            models: config::parse_models(&self.models)?,
            lagged,
            draws: self.draws,
            seed: self.seed,
            ..self.data.options()
        })
    }
}

fn emit(report: &Report, output: &OutputArgs) -> CliResult<()> {
    let text = report.render(output.format)?;
    match &output.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            let path = dir.join(format!("{}.{}", report.command, output.format.extension()));
            std::fs::write(&path, text).map_err(|e| CliError::io(path, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_report(args: &ReportArgs) -> CliResult<()> {
    let kv = KeyValues::read(&args.config)?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let opts = Options::from_config(&kv, base)?;
    let mut output = OutputArgs {
        out: args.output.out.clone().or_else(|| kv.raw("out").map(|p| base.join(p))),
        format: args.output.format,
    };
    if let Some(f) = kv.raw("format") {
        if args.output.format == Format::Text {
            output.format = config::parse_format(f).map_err(CliError::Usage)?;
        }
    }
    let report = commands::report(&opts, output.out.as_deref())?;
    emit(&report, &output)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Weights(a) => {
            let report = commands::weights(&a.options(), a.output.out.as_deref())?;
            emit(&report, &a.output)
        }
        Command::Autocorr(a) => {
            let opts = Options {
                permutations: a.permutations,
                seed: a.seed,
                growth: a.growth,
                ..a.data.options()
            };
            emit(&commands::autocorr(&opts)?, &a.data.output)
        }
        Command::Fit(a) => emit(&commands::fit_report(&a.options()?)?, &a.data.output),
        Command::Effects(a) => emit(&commands::effects(&a.options()?)?, &a.data.output),
        Command::Unitroot(a) => {
            let opts = Options {
                lags: a.lags,
                deterministic: a.deterministic,
                ..a.data.options()
            };
            emit(&commands::unitroot(&opts)?, &a.data.output)
        }
        Command::Simulate(a) => {
            let kv = match &a.config {
                Some(p) => KeyValues::read(p)?,
                None => KeyValues::parse(config::DEFAULT_CAMPAIGN)?,
            };
            let mut campaign = Campaign::from_config(&kv)?;
            if let Some(r) = a.reps {
                campaign.reps = r;
            }
            if let Some(s) = a.seed {
                campaign.sim.seed = s;
            }
            emit(&commands::simulate(&campaign)?, &a.output)
        }
        Command::Report(a) => run_report(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPATCONV_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spatconv: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
