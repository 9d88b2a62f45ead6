use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fractv::cli::{cmd_contract, cmd_oracle, cmd_refine, cmd_solve, cmd_verify, OracleParams};

/// Rothe time stepping for the fractional total-variation flow.
///
/// Log verbosity is read from FRACTV_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "fractv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scheme and write snapshots, ledger and manifest.
    Solve {
        config: PathBuf,
        /// Overrides `output_dir` of the config.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Re-check a finished run from its stored snapshots.
    Verify { run_dir: PathBuf },
    /// Compare runs over the nested step counts `m_list`.
    Refine {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run `initial` and `initial_b` and report the distance between them.
    Contract {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the single-cell shrinkage table `k,t,u`.
    Oracle {
        #[arg(long, default_value_t = 0.5)]
        s: f64,
        #[arg(long, default_value_t = 1.0)]
        spacing: f64,
        #[arg(long, default_value_t = 2.0)]
        exterior_radius: f64,
        #[arg(long, default_value_t = 0.05)]
        h: f64,
        #[arg(long, default_value_t = 1.0)]
        u0: f64,
        /// Defaults to two steps past extinction.
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FRACTV_LOG", "warn")).init();
    let outcome = match Cli::parse().command {
        Command::Solve { config, output } => cmd_solve(&config, output.as_deref()),
        Command::Verify { run_dir } => cmd_verify(&run_dir),
        Command::Refine { config, output } => cmd_refine(&config, output.as_deref()),
        Command::Contract { config, output } => cmd_contract(&config, output.as_deref()),
        Command::Oracle {
            s,
            spacing,
            exterior_radius,
            h,
            u0,
            steps,
        } => cmd_oracle(&OracleParams {
            s,
            spacing,
            exterior_radius,
            h,
            u0,
            steps,
        }),
    };
    ExitCode::from(outcome.code())
}
