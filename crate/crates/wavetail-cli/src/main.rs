use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wavetail::harness::{fmt_f64, read_series_csv, run_scenario, HarnessError, ScenarioConfig, Stage};
use wavetail::tails::{fit_tail, target_exponent, Observable};

#[derive(Parser)]
#[command(name = "wavetail", version, about = "Wave tails on asymptotically flat stationary metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Signature and falloff checks of the metric.
    CheckMetric(Common),
    /// Normalize the metric and tabulate the coordinate change.
    Normalize(Common),
    /// Tabulate the radial operator coefficients.
    BuildOperator(Common),
    /// Evolve the Cauchy data and record observer series.
    Evolve(Common),
    /// Outgoing resolvent solves on the configured tau list.
    Resolvent(Common),
    /// Zero-frequency expansion by the bootstrap iteration.
    ExpandR0(Common),
    /// Low-frequency error scan against the zero-frequency expansion.
    LowfreqScan(Common),
    /// Time series from the inverse transform of the resolvent.
    Synthesize(Common),
    /// Local power index fits of the tail; evolves first unless `--series` is given.
    FitTail(FitArgs),
    /// Decay summary with convergence evidence.
    Report(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Metric preset, used when no config file is given.
    #[arg(long, default_value = "family_k2")]
    preset: String,
    /// Final evolution time.
    #[arg(long)]
    t_max: Option<f64>,
    /// Radial grid spacing.
    #[arg(long)]
    h: Option<f64>,
    /// Observer radius; repeat for several.
    #[arg(long = "observer")]
    observers: Vec<f64>,
    /// Harmonic index; repeat for several.
    #[arg(long = "ell")]
    harmonics: Vec<u32>,
    /// Decay order of the test source used by the resolvent stages.
    #[arg(long)]
    lambda: Option<u32>,
    /// Tail window start and end.
    #[arg(long, num_args = 2)]
    window: Option<Vec<f64>>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<String>,
    /// Use the sequential code paths.
    #[arg(long)]
    sequential: bool,
    /// Validate and print the resolved config without running.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Fit an existing series CSV instead of evolving.
    #[arg(long)]
    series: Option<PathBuf>,
    /// Observer radius of `--series`.
    #[arg(long, default_value_t = 10.0)]
    r: f64,
}

impl Common {
    fn resolve(&self) -> Result<ScenarioConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::preset(&self.preset),
        };
        if let Some(t) = self.t_max {
            cfg.run.t_max = t;
            if cfg.run.window[1] > t {
                cfg.run.window = [0.3 * t, 0.93 * t];
            }
        }
        if let Some(h) = self.h {
            cfg.grid.h = h;
        }
        if !self.observers.is_empty() {
            cfg.run.observers = self.observers.clone();
        }
        if !self.harmonics.is_empty() {
            cfg.data.harmonics = self.harmonics.clone();
        }
        if let Some(l) = self.lambda {
            cfg.resolvent.lambda = l;
        }
        if let Some(w) = &self.window {
            cfg.run.window = [w[0], w[1]];
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        if self.sequential {
            cfg.parallel = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_stage(common: &Common, stage: Stage) -> Result<(), HarnessError> {
    let cfg = common.resolve()?;
    if common.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let art = run_scenario(&cfg, stage)?;
    println!("{stage}: {}", art.path.display());
    for (k, v) in &art.derived {
        println!("  {k} = {}", fmt_f64(*v));
    }
    for f in art.files.keys() {
        println!("  wrote {f}");
    }
    Ok(())
}

fn fit_series(args: &FitArgs, path: &Path) -> Result<(), HarnessError> {
    let cfg = args.common.resolve()?;
    let kappa = cfg
        .kappa()?
        .ok_or_else(|| HarnessError::Validation { field: "metric.preset".into(), reason: "flat metric has no tail exponent".into() })?;
    let series = read_series_csv(path, args.r)?;
    let window = (cfg.run.window[0], cfg.run.window[1]);
    for obs in [Observable::U, Observable::DtU] {
        let fit = fit_tail(&series, obs, window)
            .map_err(|e| HarnessError::Stage { stage: Stage::FitTail, message: e.to_string() })?;
        println!(
            "{obs:?}: p_infinity = {:.5} +- {:.5} (target {})",
            fit.p_infinity,
            fit.p_uncertainty,
            target_exponent(kappa, obs)
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::CheckMetric(c) => run_stage(c, Stage::CheckMetric),
        Command::Normalize(c) => run_stage(c, Stage::Normalize),
        Command::BuildOperator(c) => run_stage(c, Stage::BuildOperator),
        Command::Evolve(c) => run_stage(c, Stage::Evolve),
        Command::Resolvent(c) => run_stage(c, Stage::Resolvent),
        Command::ExpandR0(c) => run_stage(c, Stage::ExpandR0),
        Command::LowfreqScan(c) => run_stage(c, Stage::LowfreqScan),
        Command::Synthesize(c) => run_stage(c, Stage::Synthesize),
        Command::FitTail(a) => match &a.series {
            Some(p) => fit_series(a, p),
            None => run_stage(&a.common, Stage::FitTail),
        },
        Command::Report(c) => run_stage(c, Stage::Report),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
