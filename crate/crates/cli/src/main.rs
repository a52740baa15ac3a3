mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rampedgate::experiments::{CalibrationMethod, ModeSet, SimulationLevel};

use commands::{CliError, Context, SweepKind};
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "rampedgate",
    version,
    about = "Ramped two-qubit geometric phase gate simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration (Hz and seconds).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// RNG seed for shot sampling; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Keep successful rows already present in the sweep output.
    #[arg(long, global = true)]
    resume: bool,

    #[arg(long, global = true, value_enum)]
    level: Option<Level>,

    /// Number of motional modes.
    #[arg(long, global = true, value_parser = ["1", "4"])]
    modes: Option<String>,

    /// Apply the π pulse after both arms instead of between them.
    #[arg(long, global = true)]
    no_echo: bool,

    /// Sideband cutoff.
    #[arg(long, global = true)]
    n_max: Option<usize>,

    /// Flat-top calibration target.
    #[arg(long, global = true, value_enum)]
    calibration: Option<Calibration>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Sideband spectrum of the state-dependent force.
    Spectrum,
    /// Closed-form, numeric and asymptotic displacement comparison.
    Analytic,
    /// One calibrated gate; writes bell.json.
    Bell,
    /// Infidelity over motional ramp duration and occupation.
    SweepRamp,
    /// Infidelity over the detuning offset.
    SweepDetuning,
    /// Sampled pulse envelopes and detuning of one arm.
    ScheduleExport,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Level {
    Truncated,
    TruncatedPropagated,
    Bichromatic,
    IonFrame,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Calibration {
    GeometricPhase,
    BellFidelity,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let mut c = RunConfig::from_path(path)?;
    if let Some(out) = &cli.out {
        c.output.dir = out.to_string_lossy().into_owned();
    }
    if let Some(seed) = cli.seed {
        c.seed = seed;
    }
    if let Some(level) = cli.level {
        c.simulation.level = match level {
            Level::Truncated => SimulationLevel::Truncated,
            Level::TruncatedPropagated => SimulationLevel::TruncatedPropagated,
            Level::Bichromatic => SimulationLevel::Bichromatic,
            Level::IonFrame => SimulationLevel::IonFrame,
        };
    }
    if let Some(m) = &cli.modes {
        c.modes.set = if m == "4" {
            ModeSet::Four
        } else {
            ModeSet::Single
        };
    }
    if cli.no_echo {
        c.simulation.echo = false;
    }
    if let Some(n) = cli.n_max {
        c.simulation.n_max = n;
    }
    if let Some(m) = cli.calibration {
        c.calibration.method = match m {
            Calibration::GeometricPhase => CalibrationMethod::GeometricPhase,
            Calibration::BellFidelity => CalibrationMethod::BellFidelity,
        };
    }
    Ok(c)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = resolve(cli)?;
    config.validate()?;
    match cli.command {
        Command::SweepRamp => commands::validate_sweep(&config, SweepKind::Ramp)?,
        Command::SweepDetuning => commands::validate_sweep(&config, SweepKind::Detuning)?,
        _ => {}
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size thread pool: {e}")))?;
    }
    let out = PathBuf::from(&config.output.dir);
    let ctx = Context::new(config, out, cli.resume)?;
    log::info!("config sha256 {}", ctx.hash);
    match cli.command {
        Command::Spectrum => commands::spectrum(&ctx),
        Command::Analytic => commands::analytic(&ctx),
        Command::Bell => commands::bell(&ctx),
        Command::SweepRamp => commands::sweep(&ctx, SweepKind::Ramp),
        Command::SweepDetuning => commands::sweep(&ctx, SweepKind::Detuning),
        Command::ScheduleExport => commands::schedule_export(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RAMPEDGATE_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
