//! `stt`: run trials, Monte-Carlo studies, noise sweeps, baseline
//! comparisons, and the verification suite.
//!
//! Exit codes: 0 success, 1 a check or comparison failed, 2 usage or
//! configuration error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stt_core::harness::{
    self, monte_carlo, run_trial, sweep_noise, verify, write_json, write_report_csv,
    write_sweep_csv, write_trace_csv, Baselines, DEFAULT_SWEEP,
};
use stt_core::{Error, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "stt",
    version,
    about = "Distributed bearing-only target motion estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario JSON; defaults to the circle scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; derived from the config when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial and write its trace.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo RMSE of the distributed estimator.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Steady-state RMSE across bearing-noise levels.
    SweepNoise {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Comma-separated noise levels in radians.
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// STT against the centralized and the non-cooperative filters on
    /// identical noise.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Run theory checks by name, or `all`.
    Verify {
        #[arg(default_value = "all")]
        checks: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Assertion(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn load(common: &Common) -> Result<(ScenarioConfig, u64), Failure> {
    let cfg = match &common.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    let seed = cfg.resolve_seed(common.seed);
    Ok((cfg, seed))
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(harness::create_file(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { common } => {
            let (cfg, seed) = load(&common)?;
            let trace = run_trial(&cfg, seed, 0, Baselines::NONE)?;
            let out = sink(&common.out)?;
            match common.format {
                Format::Csv => write_trace_csv(&trace, out)?,
                Format::Json => write_json(&trace, out)?,
            }
        }
        Command::Montecarlo { common, trials } => {
            let (cfg, seed) = load(&common)?;
            let report = monte_carlo(&cfg, trials, seed, Baselines::NONE)?;
            let out = sink(&common.out)?;
            match common.format {
                Format::Csv => write_report_csv(&report, out)?,
                Format::Json => write_json(&report, out)?,
            }
        }
        Command::SweepNoise {
            common,
            trials,
            sigmas,
        } => {
            let (cfg, seed) = load(&common)?;
            let sigmas = sigmas.unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
            let report = sweep_noise(&cfg, &sigmas, trials, seed)?;
            let out = sink(&common.out)?;
            match common.format {
                Format::Csv => write_sweep_csv(&report, out)?,
                Format::Json => write_json(&report, out)?,
            }
        }
        Command::Compare { common, trials } => {
            let (cfg, seed) = load(&common)?;
            let report = monte_carlo(&cfg, trials, seed, Baselines::ALL)?;
            let out = sink(&common.out)?;
            match common.format {
                Format::Csv => write_report_csv(&report, out)?,
                Format::Json => write_json(&report, out)?,
            }
            let (stt, ckf, plkf) = (
                &report.stt,
                report.ckf.as_ref().unwrap(),
                report.plkf.as_ref().unwrap(),
            );
            eprintln!(
                "steady-state position RMSE: stt {:.4}  ckf {:.4}  plkf {:.4}",
                stt.steady_position, ckf.steady_position, plkf.steady_position
            );
            eprintln!(
                "steady-state velocity RMSE: stt {:.4}  ckf {:.4}  plkf {:.4}",
                stt.steady_velocity, ckf.steady_velocity, plkf.steady_velocity
            );
        }
        Command::Verify { checks, seed, out } => {
            let reports = verify(&checks, seed).map_err(|e| match e {
                Error::UnknownCheck(name) => Failure::Usage(format!(
                    "unknown check `{name}`; expected one of: all, {}",
                    harness::CHECKS.join(", ")
                )),
                other => Failure::from(other),
            })?;
            for r in &reports {
                eprintln!(
                    "{:<10} {}  lhs={:.6e} rhs={:.6e}",
                    r.check,
                    if r.pass { "PASS" } else { "FAIL" },
                    r.lhs,
                    r.rhs
                );
            }
            write_json(&reports, sink(&out)?)?;
            let failed: Vec<&str> = reports
                .iter()
                .filter(|r| !r.pass)
                .map(|r| r.check.as_str())
                .collect();
            if !failed.is_empty() {
                return Err(Failure::Assertion(format!(
                    "failed checks: {}",
                    failed.join(", ")
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Assertion(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
    }
}
