use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use reciprocator::harness::{self, Overrides};

/// Multi-agent reinforcement-learning lab: reciprocal-influence agents and
/// baselines on matrix games and a coin-collecting gridworld.
#[derive(Parser)]
#[command(name = "reciprolab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured match across its seeds and write metrics CSVs.
    Run {
        /// Experiment TOML file.
        config: PathBuf,
        #[command(flatten)]
        overrides: CliOverrides,
    },
    /// Train every ordered pair from the roster and emit the pairwise table.
    RoundRobin {
        /// Experiment TOML file (ipd-analytic mode).
        config: PathBuf,
        #[command(flatten)]
        overrides: CliOverrides,
    },
    /// Collect per-run metrics CSVs into tidy long-format plot data.
    EmitPlotData {
        /// Directory holding *-seed*.csv files.
        dir: PathBuf,
    },
}

#[derive(clap::Args)]
struct CliOverrides {
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the episode count.
    #[arg(long)]
    episodes: Option<usize>,
    /// Override the number of parallel match lanes.
    #[arg(long)]
    lanes: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl From<CliOverrides> for Overrides {
    fn from(o: CliOverrides) -> Overrides {
        Overrides {
            seed: o.seed,
            episodes: o.episodes,
            lanes: o.lanes,
            out: o.out,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => harness::run(&config, &overrides.into()),
        Command::RoundRobin { config, overrides } => {
            harness::round_robin(&config, &overrides.into())
        }
        Command::EmitPlotData { dir } => harness::emit_plot_data(&dir).map(|n| {
            println!("collected {n} run file(s) from {}", dir.display());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
