use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use taskfilter_cli::{commands, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "taskfilter",
    version,
    about = "Evaluate task filters for AutoML system changes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate dev and prod task populations with runs.
    Simulate,
    /// Load task and run files and summarise them.
    IngestCheck,
    /// Improvement probability of the configured change.
    EvalChange,
    /// Log-loss of each configured filter over the partitions.
    EvalFilter,
    /// Compare two filters on the same partitions.
    Contrast,
    /// Grid over filters, filter lengths and holdout sizes.
    Sweep,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Invalid(format!("cannot start {jobs} workers: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, out).map(drop),
        Command::IngestCheck => commands::ingest_check(&cfg, out).map(drop),
        Command::EvalChange => commands::eval_change(&cfg, out).map(drop),
        Command::EvalFilter => commands::eval_filter(&cfg, out).map(drop),
        Command::Contrast => commands::contrast(&cfg, out).map(drop),
        Command::Sweep => commands::sweep(&cfg, out).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
