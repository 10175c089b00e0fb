//! Front end for the guidance laboratory: simulate, train, evaluate and
//! analyse scenarios from JSON configs, writing CSV, SVG and a manifest.

pub mod commands;
pub mod output;
pub mod plot;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::{CompareArgs, MonteCarloArgs, Session, SimulateArgs, StabilityArgs, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "azem", version, about = "Adaptive ZEM/ZEV powered-descent guidance")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Scenario JSON; the built-in 2D Mars scenario when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Skip SVG figures.
    #[arg(long, global = true)]
    pub no_plots: bool,
    /// Exit with status 2 on constraint violations or instability.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fly one closed-loop descent from the nominal start.
    Simulate {
        /// End the run at the first terrain contact instead of flying through.
        #[arg(long)]
        stop_on_impact: bool,
    },
    /// Train the adaptive gain policy.
    Train {
        /// Override the iteration cap.
        #[arg(long)]
        iters: Option<usize>,
        /// Override the episodes per iteration.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Dispersed-start evaluation of a policy.
    Montecarlo {
        /// Policy checkpoint; defaults to the scenario policy or the warm start.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        /// Fly over unconstrained flat terrain.
        #[arg(long)]
        flat: bool,
    },
    /// Adaptive, classical and energy-optimal solutions from the nominal start.
    Compare {
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Eigenvalues and state transition matrix along a trajectory.
    Stability {
        /// Trajectory CSV from `simulate`; simulates the scenario when omitted.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
}

/// Run a parsed command line and return the process exit status.
pub fn run(cli: Cli) -> Result<u8> {
    let g = &cli.global;
    let mut session = Session::open(g.config.as_deref(), g.seed, &g.out, !g.no_plots, g.strict)?;
    match cli.command {
        Command::Simulate { stop_on_impact } => commands::simulate(&mut session, &SimulateArgs { stop_on_impact }),
        Command::Train { iters, episodes } => commands::train(&mut session, &TrainArgs { iters, episodes }),
        Command::Montecarlo { policy, trials, flat } => {
            commands::montecarlo(&mut session, &MonteCarloArgs { policy, trials, flat })
        }
        Command::Compare { policy } => commands::compare(&mut session, &CompareArgs { policy }),
        Command::Stability { trajectory } => commands::stability(&mut session, &StabilityArgs { trajectory }),
    }
}
