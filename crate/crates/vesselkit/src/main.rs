use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vesselkit::commands;
use vesselkit::config::{Overrides, RunConfig};
use vesselkit::CliError;

/// Finite-rank Sturm-Liouville vessels: realize potentials as spectral
/// measures, evolve them into KdV fields and verify the invariants.
#[derive(Parser)]
#[command(name = "vesselkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Number of moment levels M.
    #[arg(long)]
    order: Option<usize>,
    /// Grid as x_min,x_max,nx,t_min,t_max,nt.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Relative floor on |tau| defining the invertibility region.
    #[arg(long)]
    tol_tau_floor: Option<f64>,
    /// Margin of the signed moment split.
    #[arg(long)]
    margin: Option<f64>,
    /// Initial value of h22 per moment level (repeatable or comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    h22_init: Vec<f64>,
    /// Directory receiving the output files.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

impl Common {
    fn config(&self) -> Result<RunConfig, CliError> {
        let o = Overrides {
            order: self.order,
            grid: self.grid.clone(),
            tol_tau_floor: self.tol_tau_floor,
            margin: self.margin,
            h22_inits: self.h22_init.clone(),
        };
        RunConfig::load(self.config.as_deref())?.apply(&o)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Potential Taylor coefficients to a spectral measure file.
    Realize(Common),
    /// Measure file to a KdV field CSV and residual report.
    Evolve {
        /// Measure JSON file.
        measure: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Runs the invariant suite on a measure file.
    Verify {
        /// Measure JSON file.
        measure: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Potential to measure to vessel and back; compares Taylor coefficients.
    Roundtrip(Common),
    /// Evolves a bundled measure: one-atom, two-atom or signed-two-atom.
    Soliton {
        name: String,
        #[command(flatten)]
        common: Common,
    },
}

fn init_threads() {
    let Ok(text) = std::env::var("VESSELKIT_THREADS") else { return };
    match text.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("cannot configure {n} threads: {e}");
            }
        }
        _ => log::warn!("ignoring VESSELKIT_THREADS={text}: expected a positive integer"),
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Realize(c) => commands::realize(&c.config()?, &c.out_dir),
        Command::Evolve { measure, common } => commands::evolve(&measure, &common.config()?, &common.out_dir),
        Command::Verify { measure, common } => commands::verify(&measure, &common.config()?, &common.out_dir),
        Command::Roundtrip(c) => commands::roundtrip(&c.config()?, &c.out_dir),
        Command::Soliton { name, common } => commands::soliton(&name, &common.config()?, &common.out_dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    init_threads();
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("vesselkit: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
