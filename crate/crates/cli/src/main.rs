//! `gmopt`: circuit optimization and filter-bank co-design from JSON configs.

mod afe;
mod config;
mod optimize;
mod spice;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::ConfigError;

#[derive(Parser)]
#[command(name = "gmopt", version, about = "Analog circuit optimization and filter-bank co-design")]
struct Cli {
    /// Worker threads for evaluation and training (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Analytic,
    Spice,
}

#[derive(Subcommand)]
enum Command {
    /// Multi-objective Bayesian optimization of the circuit parameters.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "analytic")]
        backend: Backend,
        /// Overrides the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the state.json in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Train a filter bank jointly with a keyword classifier.
    TrainAfe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Frequency response of one channel at unit gm1 = 3.84 nS, C1 = 3.2 pF.
    EvalFilter {
        #[arg(long)]
        phi_g: f64,
        #[arg(long)]
        phi_c: f64,
        /// Linear grid `lo:hi:n` in Hz.
        #[arg(long)]
        freqs: String,
        /// Output CSV file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a netlist template with explicit values or a trained bank.
    SpiceRender {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert an ASCII raw file into one CSV per plot.
    SpiceParse {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// An error with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn runtime(message: impl fmt::Display) -> Self {
        CliError {
            code: 1,
            message: message.to_string(),
        }
    }

    pub fn usage(message: impl fmt::Display) -> Self {
        CliError {
            code: 2,
            message: message.to_string(),
        }
    }

    pub fn simulator(message: impl fmt::Display) -> Self {
        CliError {
            code: 3,
            message: message.to_string(),
        }
    }

    pub fn diverged(message: impl fmt::Display) -> Self {
        CliError {
            code: 4,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::usage(e)
    }
}

/// Writes `bytes` to `path` through a temporary sibling so readers never see
/// a half-written file.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(CliError::runtime)?;
    }
    match cli.command {
        Command::Optimize {
            config,
            backend,
            out,
            resume,
        } => optimize::run(&config, backend, out, resume),
        Command::TrainAfe { config, out } => afe::train(&config, out),
        Command::EvalFilter {
            phi_g,
            phi_c,
            freqs,
            out,
        } => afe::eval_filter(phi_g, phi_c, &freqs, out.as_deref()),
        Command::SpiceRender { config, out } => spice::render(&config, out),
        Command::SpiceParse { config, out } => spice::parse(&config, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gmopt: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
