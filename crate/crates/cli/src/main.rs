//! `plap`: configuration-driven experiment runner.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::Serialize;

use plap::experiments::{ExperimentConfig, SuiteOutput, Subcommand};
use plap::report::{Status, Summary};

const EXIT_FAIL: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;
const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 64;

/// Bundled defaults; every key is optional in user configs.
const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    GeometrySelftest,
    AbpVerify,
    MeasureEstimate,
    InfconvDemo,
    BarrierCalibrate,
    LevelDecay,
    HarnackSweep,
    Hoelder,
    All,
    /// Print the bundled default configuration.
    DefaultConfig,
}

impl Command {
    fn suites(self) -> Vec<Subcommand> {
        match self {
            Command::GeometrySelftest => vec![Subcommand::GeometrySelftest],
            Command::AbpVerify => vec![Subcommand::AbpVerify],
            Command::MeasureEstimate => vec![Subcommand::MeasureEstimate],
            Command::InfconvDemo => vec![Subcommand::InfconvDemo],
            Command::BarrierCalibrate => vec![Subcommand::BarrierCalibrate],
            Command::LevelDecay => vec![Subcommand::LevelDecay],
            Command::HarnackSweep => vec![Subcommand::HarnackSweep],
            Command::Hoelder => vec![Subcommand::Hoelder],
            Command::All => Subcommand::ALL.to_vec(),
            Command::DefaultConfig => Vec::new(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "plap", version, about = "Numerical checks of ABP, decay and Harnack estimates on space forms")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML configuration; missing keys take the bundled defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, overriding `run.out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base seed, overriding `run.seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads, overriding `run.jobs` (0 uses every core).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Keep only rows whose anchor or parameters contain TAG.
    #[arg(long, value_name = "TAG")]
    filter: Option<String>,
}

#[derive(Debug, Serialize)]
struct SummaryEntry {
    #[serde(flatten)]
    summary: Summary,
    status: Status,
    seconds: f64,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg: ExperimentConfig = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => toml::from_str(DEFAULT_CONFIG).map_err(|e| format!("bundled config: {e}"))?,
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.run.jobs = jobs;
    }
    if let Some(out) = &cli.out {
        cfg.run.out = out.to_string_lossy().into_owned();
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn exit_for(entries: &[SummaryEntry]) -> u8 {
    if entries.iter().any(|e| e.status == Status::Fail) {
        EXIT_FAIL
    } else if entries.iter().any(|e| e.status == Status::Inconclusive) {
        EXIT_INCONCLUSIVE
    } else {
        0
    }
}

fn run_suite(name: Subcommand, cfg: &ExperimentConfig, filter: Option<&str>, out: &Path) -> Result<SummaryEntry, String> {
    let start = Instant::now();
    let mut output: SuiteOutput = name.run(cfg).map_err(|e| format!("{name}: {e}"))?;
    if let Some(tag) = filter {
        output = output.filtered(tag);
    }
    output.write_to(out).map_err(|e| e.to_string())?;
    let summary = output.summary();
    let status = summary.status();
    let seconds = start.elapsed().as_secs_f64();
    println!(
        "{name:<18} {status:<12} pass={} fail={} inconclusive={} skip={} ({seconds:.1} s)",
        summary.pass, summary.fail, summary.inconclusive, summary.skip
    );
    Ok(SummaryEntry { summary, status, seconds })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.command == Command::DefaultConfig {
        print!("{DEFAULT_CONFIG}");
        return ExitCode::SUCCESS;
    }
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: malformed configuration: {e}");
            eprintln!("usage: plap <COMMAND> [--config PATH] [--out DIR] [--seed N] [--jobs N] [--filter TAG]");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if cfg.run.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.run.jobs).build_global() {
            eprintln!("error: worker pool: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let out = PathBuf::from(&cfg.run.out);
    let mut entries = Vec::new();
    for suite in cli.command.suites() {
        match run_suite(suite, &cfg, cli.filter.as_deref(), &out) {
            Ok(entry) => entries.push(entry),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_RUNTIME);
            }
        }
    }
    let json = match serde_json::to_string_pretty(&entries) {
        Ok(j) => j,
        Err(e) => {
            eprintln!("error: summary: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    if let Err(e) = fs::write(out.join("summary.json"), json + "\n") {
        eprintln!("error: {}: {e}", out.display());
        return ExitCode::from(EXIT_RUNTIME);
    }
    ExitCode::from(exit_for(&entries))
}
