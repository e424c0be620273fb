//! Command line front end. Exit codes: 0 on success, 1 on invalid input or
//! usage, 2 on internal failures such as unwritable outputs.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use pandemon_core::bandwidth::BandwidthChoice;
use pandemon_core::forecast::{admissions_registry, default_c2_grid, BacktestObjective, ExternalAdmissions};
use pandemon_core::model::backtest;
use pandemon_core::sim::{replicate_rng, simulate_cohorts};
use pandemon_core::{fit_model, run_study, Cause, DailyPanel, EstimationError, FitConfig, FittedModel, PanelError, StudyConfig, TrueModel};
use serde::Serialize;
use thiserror::Error;

use crate::api::{self, ServiceConfig};
use crate::views::{self, IndicatorKind};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invalid(_) => 1,
            Self::Internal(_) => 2,
        }
    }
}

impl From<EstimationError> for CliError {
    fn from(e: EstimationError) -> Self {
        Self::Invalid(e.to_string())
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        Self::Invalid(e.to_string())
    }
}

fn internal(context: &str) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Internal(format!("{context}: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "pandemon", version, about = "Hospital-stay hazards and death forecasts from daily counts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CauseArg {
    All,
    Recovery,
    Death,
}

impl From<CauseArg> for Cause {
    fn from(c: CauseArg) -> Self {
        match c {
            CauseArg::All => Cause::All,
            CauseArg::Recovery => Cause::Recovery,
            CauseArg::Death => Cause::Death,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IndicatorArg {
    Median,
    Exitprob,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    Daily,
    Cumulative,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a panel CSV and print a summary.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Write the normalised panel here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit hazard surfaces and write a model directory.
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// `auto` for cross-validation or `b1,b2` in days.
        #[arg(long, default_value = "auto")]
        bandwidths: String,
        #[arg(long)]
        max_duration: Option<usize>,
        /// Fit on the first N days only.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value = "epanechnikov")]
        kernel: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Median stay or exit probabilities by admission day, as CSV.
    Indicators {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "type", value_enum)]
        kind: IndicatorArg,
        #[arg(long, value_enum)]
        cause: Option<CauseArg>,
        /// Days already spent in hospital.
        #[arg(long, default_value_t = 0)]
        duration: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scenario forecast of in-hospital and total deaths, as JSON.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 1.0)]
        c1: f64,
        #[arg(long, default_value_t = 1.0)]
        c2: f64,
        /// `persistence` or `trailing-mean`.
        #[arg(long)]
        admissions_model: Option<String>,
        /// One admissions value per line for every forecast day.
        #[arg(long, conflicts_with = "admissions_model")]
        admissions_file: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the daily series as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Choose C2 against held-out days after a cutoff.
    Backtest {
        #[arg(long)]
        input: PathBuf,
        /// Last day index used for fitting.
        #[arg(long)]
        cutoff: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value = "auto")]
        bandwidths: String,
        #[arg(long, value_enum, default_value = "daily")]
        objective: ObjectiveArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a pandemic with known hazards and write its daily panel.
    Simulate {
        #[arg(long, default_value_t = 120)]
        days: usize,
        /// Expected number of admissions.
        #[arg(long, default_value_t = 10_000.0)]
        n: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Constant arrivals and time-homogeneous hazards.
        #[arg(long)]
        stationary: bool,
        #[arg(long)]
        outside_ratio: Option<f64>,
        #[arg(long)]
        swap_causes: bool,
        #[arg(long)]
        out: PathBuf,
        /// Linked stay records as CSV.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Monte-Carlo comparison of full and partial information fits.
    Study {
        #[arg(long, value_delimiter = ',', default_value = "10000,40000")]
        sizes: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        replicates: usize,
        #[arg(long, default_value_t = 20201001)]
        seed: u64,
        #[arg(long, default_value_t = 120)]
        days: usize,
        #[arg(long, default_value_t = 60)]
        max_duration: usize,
        #[arg(long, default_value = "auto")]
        bandwidths: String,
        /// CSV report; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the JSON HTTP API.
    Serve {
        #[arg(long, env = "PANDEMON_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Built dashboard assets to serve at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Seconds allowed for a fit or backtest request.
        #[arg(long, default_value_t = 300)]
        timeout: u64,
    },
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(internal("writing output")),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(internal("writing to stdout"))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn read_panel(path: &Path) -> Result<DailyPanel, CliError> {
    DailyPanel::ingest_csv_path(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct PanelSummary {
    start_date: chrono::NaiveDate,
    days: usize,
    admissions: u64,
    discharges: u64,
    deaths_in: u64,
    deaths_out: Option<u64>,
    peak_occupancy: u64,
    final_occupancy: u64,
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest { input, out } => {
            let panel = read_panel(&input)?;
            let occ = panel.occupancy();
            let summary = PanelSummary {
                start_date: panel.start_date(),
                days: panel.days(),
                admissions: panel.admissions().iter().sum(),
                discharges: panel.discharges().iter().sum(),
                deaths_in: panel.deaths_in().iter().sum(),
                deaths_out: panel.deaths_out().map(|s| s.iter().sum()),
                peak_occupancy: occ.iter().copied().max().unwrap_or(0),
                final_occupancy: occ.last().copied().unwrap_or(0),
            };
            if let Some(out) = out {
                fs::write(&out, panel.to_csv_string()).map_err(internal("writing panel"))?;
            }
            write_output(None, &to_json(&summary)?)
        }
        Command::Fit {
            input,
            bandwidths,
            max_duration,
            window,
            kernel,
            out,
        } => {
            let mut panel = read_panel(&input)?;
            if let Some(w) = window {
                if w < 2 || w > panel.days() {
                    return Err(CliError::Invalid(format!("--window must be in 2..={}", panel.days())));
                }
                panel = panel.truncate(w)?;
            }
            let config = FitConfig {
                bandwidths: BandwidthChoice::parse(&bandwidths)?,
                max_duration,
                kernel,
                ..FitConfig::default()
            };
            let model = fit_model(&panel, &config)?;
            model.write_dir(&out).map_err(internal("writing model directory"))?;
            let d = &model.summary.diagnostics;
            eprintln!(
                "fitted {} days with bandwidths {} in {} iterations (converged: {})",
                model.summary.days, d.bandwidths, d.iterations, d.converged
            );
            Ok(())
        }
        Command::Indicators {
            model,
            kind,
            cause,
            duration,
            out,
        } => {
            let model = FittedModel::read_dir(&model)?;
            let kind = match kind {
                IndicatorArg::Median => IndicatorKind::Median,
                IndicatorArg::Exitprob => IndicatorKind::Exitprob,
            };
            let cause = cause.map_or(kind.default_cause(), Cause::from);
            kind.check_cause(cause).map_err(CliError::Invalid)?;
            let series = views::indicator_series(&model, kind, cause, duration);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["date", "day", "value"]).map_err(|e| CliError::Internal(e.to_string()))?;
            for p in &series.points {
                let value = p.value.map(|v| v.to_string()).unwrap_or_default();
                w.write_record([p.date.to_string(), p.day.to_string(), value])
                    .map_err(|e| CliError::Internal(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
            write_output(out.as_deref(), &String::from_utf8_lossy(&bytes))
        }
        Command::Forecast {
            model,
            horizon,
            c1,
            c2,
            admissions_model,
            admissions_file,
            out,
            csv,
        } => {
            let fitted = FittedModel::read_dir(&model)?;
            let admissions = match admissions_file {
                Some(path) => Box::new(ExternalAdmissions(read_series(&path)?)) as Box<_>,
                None => match admissions_model {
                    Some(name) => admissions_registry().create(&name)?,
                    None => admissions_registry().create_default(),
                },
            };
            let id = model.file_name().map(|s| s.to_string_lossy().into_owned());
            let result = fitted.forecast(horizon, c1, c2, admissions.as_ref(), id)?;
            if let Some(path) = csv {
                let file = fs::File::create(&path).map_err(internal("writing forecast CSV"))?;
                result.write_csv(file).map_err(internal("writing forecast CSV"))?;
            }
            write_output(out.as_deref(), &to_json(&result)?)
        }
        Command::Backtest {
            input,
            cutoff,
            horizon,
            bandwidths,
            objective,
            out,
        } => {
            let panel = read_panel(&input)?;
            let config = FitConfig {
                bandwidths: BandwidthChoice::parse(&bandwidths)?,
                ..FitConfig::default()
            };
            let objective = match objective {
                ObjectiveArg::Daily => BacktestObjective::Daily,
                ObjectiveArg::Cumulative => BacktestObjective::Cumulative,
            };
            let adm = admissions_registry().create_default();
            let result = backtest(&panel, cutoff, horizon, &default_c2_grid(), &config, adm.as_ref(), objective)?;
            write_output(out.as_deref(), &to_json(&result)?)
        }
        Command::Simulate {
            days,
            n,
            seed,
            stationary,
            outside_ratio,
            swap_causes,
            out,
            records,
        } => {
            let mut model = if stationary {
                TrueModel::stationary(days, n)?
            } else {
                TrueModel::two_waves(days, n)?
            }
            .with_swapped_causes(swap_causes);
            if let Some(r) = outside_ratio {
                model = model.with_outside_ratio(r)?;
            }
            let sim = simulate_cohorts(&model, &mut replicate_rng(seed, 0));
            fs::write(&out, sim.panel.to_csv_string()).map_err(internal("writing panel"))?;
            if let Some(path) = records {
                let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Internal(e.to_string()))?;
                for r in &sim.records {
                    w.serialize(r).map_err(|e| CliError::Internal(e.to_string()))?;
                }
                w.flush().map_err(internal("writing records"))?;
            }
            Ok(())
        }
        Command::Study {
            sizes,
            replicates,
            seed,
            days,
            max_duration,
            bandwidths,
            out,
            json,
        } => {
            let first = *sizes
                .first()
                .ok_or_else(|| CliError::Invalid("--sizes needs at least one value".into()))?;
            let model = TrueModel::two_waves(days, first)?;
            let config = StudyConfig {
                sizes,
                replicates,
                seed,
                max_duration,
                bandwidths: BandwidthChoice::parse(&bandwidths)?,
                ..StudyConfig::default()
            };
            let report = run_study(&model, &config)?;
            if let Some(path) = json {
                fs::write(&path, to_json(&report)?).map_err(internal("writing study JSON"))?;
            }
            let mut buf = Vec::new();
            report.write_csv(&mut buf).map_err(internal("formatting study CSV"))?;
            write_output(out.as_deref(), &String::from_utf8_lossy(&buf))
        }
        Command::Serve {
            port,
            host,
            static_dir,
            timeout,
        } => {
            if let Some(dir) = &static_dir {
                if !dir.is_dir() {
                    return Err(CliError::Invalid(format!("--static {} is not a directory", dir.display())));
                }
            }
            let _ = tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
                )
                .with_writer(std::io::stderr)
                .try_init();
            let config = ServiceConfig {
                timeout: Duration::from_secs(timeout),
                static_dir,
            };
            let runtime = tokio::runtime::Runtime::new().map_err(internal("starting runtime"))?;
            runtime
                .block_on(api::serve(SocketAddr::new(host, port), config))
                .map_err(internal("serving"))
        }
    }
}

/// One number per line; blank lines and a non-numeric header are skipped.
fn read_series(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => {}
            Err(_) => return Err(CliError::Invalid(format!("{}: line {}: `{line}` is not a number", path.display(), i + 1))),
        }
    }
    Ok(out)
}
