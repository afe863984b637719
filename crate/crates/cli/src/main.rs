use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use aoisim::experiment::{simulate, verify, ExperimentConfig, VerifyKind, OUTPUT_DIR_ENV};
use aoisim::traffic::{generate_poisson_schedule, DelayModel, TrafficConfig};
use aoisim::types::ArrivalSchedule;
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "aoisim", version, about = "Age-of-information scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a parameter sweep and write results.csv and manifest.json.
    #[command(after_help = format!("The output directory can be overridden with {OUTPUT_DIR_ENV}."))]
    Simulate {
        config: PathBuf,
        /// Also dump one JSON trace per run.
        #[arg(long)]
        dump_traces: bool,
    },
    /// Run a verification check; exits 0 on pass and 1 on failure.
    Verify {
        check: Check,
        config: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate or validate an arrival-schedule CSV.
    Schedule {
        #[command(subcommand)]
        action: ScheduleAction,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    Dominance,
    Nbu,
    XiBound,
    WorkEfficiency,
    PenaltyProps,
}

impl From<Check> for VerifyKind {
    fn from(c: Check) -> Self {
        match c {
            Check::Dominance => VerifyKind::Dominance,
            Check::Nbu => VerifyKind::Nbu,
            Check::XiBound => VerifyKind::XiBound,
            Check::WorkEfficiency => VerifyKind::WorkEfficiency,
            Check::PenaltyProps => VerifyKind::PenaltyProps,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Delay {
    Zero,
    BernoulliHalf,
}

#[derive(Subcommand)]
enum ScheduleAction {
    /// Write a Poisson schedule with columns gen_time,arrival_time.
    Gen {
        file: PathBuf,
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Delay::Zero, conflicts_with = "fixed_delay")]
        delay: Delay,
        /// Constant arrival delay.
        #[arg(long)]
        fixed_delay: Option<f64>,
    },
    /// Check a schedule CSV and print its size and fingerprint.
    Validate { file: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, ExitCode> {
    ExperimentConfig::load(path).map_err(|e| config_error(&format!("{}: {e}", path.display())))
}

fn config_error(msg: &str) -> ExitCode {
    eprintln!("config error: {msg}");
    ExitCode::from(EXIT_CONFIG)
}

fn run_simulate(config: PathBuf, dump_traces: bool) -> anyhow::Result<ExitCode> {
    let mut cfg = match load(&config) {
        Ok(c) => c,
        Err(code) => return Ok(code),
    };
    cfg.output.dump_traces |= dump_traces;
    if let Err(e) = cfg.plan() {
        return Ok(config_error(&e.to_string()));
    }
    let (results, paths) = simulate(&cfg).context("simulation failed")?;
    println!("{:<20} {:>6} {:>12} {:>10} {:>12}", "policy", "rho", "mean", "ci_half", "lower_bound");
    for c in &results.cells {
        let lb = c.lower_bound.map_or(String::new(), |s| format!("{:.4}", s.mean));
        println!(
            "{:<20} {:>6} {:>12.4} {:>10.4} {:>12}",
            c.policy, c.rho, c.summary.mean, c.summary.ci_half, lb
        );
    }
    eprintln!("wrote {} and {}", paths.results_csv.display(), paths.manifest.display());
    Ok(ExitCode::SUCCESS)
}

fn run_verify(check: Check, config: PathBuf, report: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let cfg = match load(&config) {
        Ok(c) => c,
        Err(code) => return Ok(code),
    };
    let r = match verify(check.into(), &cfg) {
        Ok(r) => r,
        Err(e @ (aoisim::Error::Config(_) | aoisim::Error::InvalidKeys(_))) => return Ok(config_error(&e.to_string())),
        Err(e) => return Err(e).context("verification failed"),
    };
    match report {
        Some(path) => serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &r)?,
        None => println!("{}", serde_json::to_string_pretty(&r)?),
    }
    eprintln!("{}: {}", config.display(), if r.ok { "PASS" } else { "FAIL" });
    Ok(if r.ok { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAIL) })
}

fn run_schedule(action: ScheduleAction) -> anyhow::Result<ExitCode> {
    match action {
        ScheduleAction::Gen { file, rate, horizon, seed, delay, fixed_delay } => {
            let delay_model = match (fixed_delay, delay) {
                (Some(d), _) => DelayModel::Fixed { delay: d },
                (None, Delay::Zero) => DelayModel::Zero,
                (None, Delay::BernoulliHalf) => DelayModel::BernoulliHalf,
            };
            let cfg = TrafficConfig { rate, delay_model, horizon, seed };
            let sched = match generate_poisson_schedule(&cfg) {
                Ok(s) => s,
                Err(e) => return Ok(config_error(&e.to_string())),
            };
            sched.write_csv(BufWriter::new(File::create(&file)?))?;
            println!("{} generations, fingerprint {:016x}", sched.len(), sched.fingerprint());
            Ok(ExitCode::SUCCESS)
        }
        ScheduleAction::Validate { file } => {
            let f = File::open(&file).with_context(|| format!("opening {}", file.display()))?;
            match ArrivalSchedule::read_csv(BufReader::new(f)) {
                Ok(s) => {
                    println!("valid: {} generations, fingerprint {:016x}", s.len(), s.fingerprint());
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    println!("invalid: {e}");
                    Ok(ExitCode::from(EXIT_FAIL))
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Simulate { config, dump_traces } => run_simulate(config, dump_traces),
        Command::Verify { check, config, report } => run_verify(check, config, report),
        Command::Schedule { action } => run_schedule(action),
    };
    out.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(EXIT_CONFIG)
    })
}
