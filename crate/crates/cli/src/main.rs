use std::path::PathBuf;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod svg;

use commands::GenerateKind;

#[derive(Parser)]
#[command(name = "spreadgp", version, about = "Optimal resource allocation against spreading processes on networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic contact network as an edge list.
    Generate {
        #[command(subcommand)]
        kind: Generator,
        #[arg(long, global = true, default_value_t = 0)]
        seed: u64,
        #[arg(long, global = true, default_value = "network.csv")]
        out: PathBuf,
    },
    /// Solve the allocation problem at the configured budget.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Solve over the configured list of budgets.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Integrate the mean-field dynamics under an allocation.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// result.json from `solve`; without it the uncontrolled rates are used.
        #[arg(long)]
        allocation: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Uniform initial infection probability.
        #[arg(long)]
        p0: Option<f64>,
        /// Also integrate the exact 2^n-state model (n <= 10).
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare per-edge investment with edge centrality.
    Analyze {
        #[arg(long, required_unless_present = "config", conflicts_with = "config")]
        network: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        result: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run the invariant checks on a configured instance.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
    },
}

#[derive(Subcommand)]
enum Generator {
    /// Directed cycle plus random extra edges.
    Cycle {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        extra: usize,
        #[arg(long, default_value_t = 0.5)]
        w_lo: f64,
        #[arg(long, default_value_t = 1.5)]
        w_hi: f64,
    },
    /// Complete core of hubs, each leaf attached to one hub in both directions.
    Hub {
        #[arg(long)]
        hubs: usize,
        #[arg(long)]
        leaves: usize,
        #[arg(long, default_value_t = 1.0)]
        hub_weight: f64,
        #[arg(long, default_value_t = 0.5)]
        leaf_weight: f64,
    },
}

fn run(cli: Cli) -> Result<(), error::CliError> {
    match cli.command {
        Command::Generate { kind, seed, out } => {
            let kind = match kind {
                Generator::Cycle { n, extra, w_lo, w_hi } => GenerateKind::Cycle { n, extra, w_lo, w_hi },
                Generator::Hub { hubs, leaves, hub_weight, leaf_weight } => {
                    GenerateKind::Hub { hubs, leaves, hub_weight, leaf_weight }
                }
            };
            commands::generate(&kind, seed, &out)
        }
        Command::Solve { config, out_dir, tol } => commands::solve(&config, &out_dir, tol),
        Command::Sweep { config, out_dir, tol } => commands::sweep(&config, &out_dir, tol),
        Command::Simulate { config, allocation, out_dir, p0, exact, seed } => {
            commands::simulate(&config, allocation.as_deref(), &out_dir, p0, exact, seed)
        }
        Command::Analyze { network, config, result, out_dir } => {
            let network = match (network, config) {
                (Some(n), _) => n,
                (None, Some(c)) => config::load(&c)?.network_path,
                (None, None) => unreachable!("clap requires one of --network/--config"),
            };
            commands::analyze(&network, &result, &out_dir)
        }
        Command::Verify { config, out_dir, tol } => commands::verify(&config, &out_dir, tol),
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
