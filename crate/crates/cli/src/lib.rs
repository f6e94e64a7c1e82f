//! `csifb` command-line driver: dataset generation, EFNet training,
//! per-scheme evaluation and report merging.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    /// Maps a library error, adding the file or step it concerns.
    pub fn from_core(context: impl std::fmt::Display, e: csifb_core::Error) -> Self {
        use csifb_core::Error as E;
        let msg = format!("{context}: {e}");
        match e {
            E::Io(_) | E::Csv(_) | E::Format { .. } => CliError::Io(msg),
            E::InvalidInput(_) => CliError::Config(msg),
            _ => CliError::Runtime(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "csifb", version, about = "Wi-Fi CSI feedback workbench")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for channels, initialization and simulation noise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Primary output file of the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a normalized beamforming dataset.
    GenData,
    /// Train EFNet on a dataset.
    Train {
        /// Dataset file (default: the configured dataset path).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Continue from a saved training state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate feedback schemes on the test split.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Trained EFNet checkpoint, needed for the `efnet` scheme.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Scheme to evaluate (repeatable): T0G1, T1G4, T0B100, efnet,
        /// perfect, ref:LABEL:BITS:EVM_DB.
        #[arg(long = "scheme")]
        schemes: Vec<String>,
    },
    /// Merge report CSVs into one table and a plot-ready CSV.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

/// Parses the configuration and applies the common flags.
pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Command::Compare { reports } = &cli.command {
        return commands::compare(reports, cli.common.out.as_deref());
    }
    let mut cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::GenData => {
            cfg.validate()?;
            commands::gen_data(&cfg, cli.common.out.as_deref())
        }
        Command::Train { dataset, resume } => {
            cfg.validate()?;
            commands::train(&cfg, dataset.as_deref(), resume.as_deref(), cli.common.out.as_deref())
        }
        Command::Eval { dataset, model, schemes } => {
            if !schemes.is_empty() {
                cfg.schemes = schemes;
            }
            cfg.validate()?;
            commands::eval(&cfg, dataset.as_deref(), model.as_deref(), cli.common.out.as_deref())
        }
        Command::Compare { .. } => unreachable!("handled above"),
    }
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
