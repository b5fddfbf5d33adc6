mod experiments;
mod manifest;
mod report;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::Value;

use crate::experiments::Outcome;
use crate::scenario::{build_scenario, parse_assignment, read_config, set_path};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] prelog_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use prelog_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(
                E::InvalidParameter { .. }
                | E::RankNotBelowBlockLength { .. }
                | E::InvalidPsd(_)
                | E::UnsupportedRegime(_)
                | E::TooFewPoints(_)
                | E::DegeneratePilot(_)
                | E::MissingFirstPilot
                | E::PilotOutOfRange { .. }
                | E::DimensionMismatch { .. }
                | E::InsufficientSamples { .. }
                | E::InvalidWindow { .. }
                | E::Invalid(_),
            ) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "prelog-lab", version, about = "Seeded experiments on noncoherent block-fading front ends")]
struct Cli {
    /// Scenario JSON file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long = "spec.n", global = true)]
    spec_n: Option<usize>,
    #[arg(long = "spec.t_s", global = true)]
    spec_t_s: Option<f64>,
    #[arg(long = "spec.nu_max", global = true)]
    spec_nu_max: Option<f64>,
    /// Override any scenario field: `--set mi_sweep.n_outer=64`.
    #[arg(long = "set", value_name = "PATH=VALUE", global = true)]
    set: Vec<String>,
    /// Artifact directory; nothing is written when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, env = "PRELOG_LAB_WORKERS", global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form samples against the continuous-time oracle.
    Validate,
    /// Numerical rank of the symbol-rate fading covariance.
    Rank,
    /// Full-spark check of the oversampled dictionary.
    Spark,
    /// Monte-Carlo Jacobian nonsingularity and witness identity.
    JacobianMc,
    /// Joint channel and data recovery from one pilot.
    Identify,
    /// Mutual-information sweep over `rho_grid_db`.
    MiSweep,
    /// Pre-log slopes and reference lines from sweep CSVs.
    PrelogReport {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Rank => "rank",
            Command::Spark => "spark",
            Command::JacobianMc => "jacobian-mc",
            Command::Identify => "identify",
            Command::MiSweep => "mi-sweep",
            Command::PrelogReport { .. } => "prelog-report",
        }
    }
}

fn scenario_value(cli: &Cli) -> Result<(String, Value, bool), CliError> {
    let (text, mut value) = read_config(cli.config.as_deref())?;
    let mut overrides: Vec<(String, Value)> = Vec::new();
    if let Some(s) = cli.seed {
        overrides.push(("seed".into(), s.into()));
    }
    if let Some(n) = cli.spec_n {
        overrides.push(("spec.n".into(), n.into()));
    }
    if let Some(t) = cli.spec_t_s {
        overrides.push(("spec.t_s".into(), t.into()));
    }
    if let Some(nu) = cli.spec_nu_max {
        overrides.push(("spec.nu_max".into(), nu.into()));
    }
    for s in &cli.set {
        overrides.push(parse_assignment(s)?);
    }
    let overridden = !overrides.is_empty() || cli.config.is_none();
    for (k, v) in overrides {
        set_path(&mut value, &k, v)?;
    }
    Ok((text, value, overridden))
}

fn write_artifacts(dir: &Path, artifacts: &[(String, Vec<u8>)]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    for (name, bytes) in artifacts {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let workers = match cli.workers {
        Some(0) => return Err(CliError::Config("--workers must be positive".into())),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let started = Instant::now();

    let (config_echo, seed, out_dir, outcome) = match &cli.command {
        Command::PrelogReport { input } => {
            let outcome = report::prelog_report(input)?;
            let echo = serde_json::json!({ "inputs": input });
            (echo, None, cli.out.clone(), outcome)
        }
        cmd => {
            let (text, value, overridden) = scenario_value(cli)?;
            let sc = build_scenario(&text, &value, overridden)?;
            let outcome = match cmd {
                Command::Validate => experiments::validate(&sc)?,
                Command::Rank => experiments::rank(&sc)?,
                Command::Spark => experiments::spark(&sc)?,
                Command::JacobianMc => experiments::jacobian_mc(&sc)?,
                Command::Identify => experiments::identify(&sc)?,
                Command::MiSweep => experiments::mi_sweep(&sc)?,
                Command::PrelogReport { .. } => unreachable!("handled above"),
            };
            let echo = serde_json::to_value(&sc).expect("scenario serializes");
            (echo, Some(sc.seed), cli.out.clone().or(sc.out.clone()), outcome)
        }
    };

    if let Some(dir) = out_dir {
        let m = manifest::Manifest::new(
            cli.command.name(),
            config_echo,
            seed,
            workers,
            &outcome,
            started.elapsed().as_secs_f64(),
        );
        let mut artifacts = outcome.artifacts.clone();
        artifacts.push(("manifest.json".into(), m.to_bytes()));
        write_artifacts(&dir, &artifacts)?;
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            match outcome.failed_invariant {
                None => ExitCode::SUCCESS,
                Some(name) => {
                    eprintln!("{}", CliError::Invariant(name));
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
