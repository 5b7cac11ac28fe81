mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use trimer::meanfield::ic_from_number_state;
use trimer::ModelParams;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Model(String),
}

impl CliError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Model(_) => "model",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "trimer",
    version,
    about = "Spectra, torus wave functions and dynamics of the three-well Bose-Hubbard model"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use the reference model parameters (N = 30, x = 0.1, k = 0.5) for the model section.
    #[arg(long, global = true)]
    paper_defaults: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Eigenvalues of the Fock-space Hamiltonian.
    Spectrum,
    /// Density and phase grids plus a PGM image for each eigenstate.
    Wavefn {
        /// 1-based state labels, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        states: Vec<usize>,
    },
    /// Organising-centre classification of every eigenstate.
    Classify(ChaosFlag),
    /// Poincare section psi1 = 0 at one energy.
    Poincare {
        #[arg(long, allow_hyphen_values = true)]
        energy: f64,
        /// Seed lattice size in (psi2, J2).
        #[arg(long, value_delimiter = ',', default_values_t = [8, 8])]
        seeds: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        crossings: usize,
    },
    /// Mean-field trajectory and its frequency-locking report.
    Evolve {
        /// Initial occupations n1,n2,n3; amplitudes are sqrt(n + 1/2) with zero phases.
        #[arg(long, value_delimiter = ',', required = true)]
        number_state: Vec<usize>,
        /// End time in model units; defaults to `lock.t_end`.
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Classical and quantum labels for every number state.
    Gridmap(ChaosFlag),
}

#[derive(Args, Debug)]
struct ChaosFlag {
    /// Estimate the classical chaotic fraction first so that states in chaotic energy bands become E2.
    #[arg(long)]
    chaos: bool,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if cli.paper_defaults => RunConfig::default(),
        None => {
            return Err(CliError::Config(
                "pass --config <path> or --paper-defaults".into(),
            ))
        }
    };
    if cli.paper_defaults {
        config.model = ModelParams::default();
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<commands::Artifacts, CliError> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Spectrum => commands::spectrum(&config),
        Command::Wavefn { states } => commands::wavefn(&config, states),
        Command::Classify(f) => commands::classify(&config, f.chaos),
        Command::Poincare {
            energy,
            seeds,
            crossings,
        } => {
            let [a, b] = seeds[..] else {
                return Err(CliError::Usage("--seeds takes two counts, e.g. 8,8".into()));
            };
            commands::poincare(&config, *energy, (a, b), *crossings)
        }
        Command::Evolve {
            number_state,
            t_end,
        } => {
            let n: [usize; 3] = number_state[..].try_into().map_err(|_| {
                CliError::Usage("--number-state takes three occupations, e.g. 2,5,23".into())
            })?;
            if n.iter().sum::<usize>() != config.model.n_particles {
                return Err(CliError::Usage(format!(
                    "number state {n:?} does not hold N = {} particles",
                    config.model.n_particles
                )));
            }
            let label = format!("n{}_{}_{}", n[0], n[1], n[2]);
            commands::evolve_cmd(
                &config,
                ic_from_number_state(n, [0.0; 3]),
                &label,
                t_end.unwrap_or(config.lock.t_end),
            )
        }
        Command::Gridmap(f) => commands::gridmap(&config, f.chaos),
    }
    .inspect(|a| {
        for p in &a.written {
            println!("{}", commands::relative(p, &config.out_dir));
        }
    })
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!(
        "{}",
        json!({ "error": { "kind": kind, "message": message } })
    );
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 2),
    };
    match run(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), e.exit_code()),
    }
}
