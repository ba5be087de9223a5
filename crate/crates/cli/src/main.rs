use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod format;

/// Unknown-input observer design and verification.
#[derive(Debug, Parser)]
#[command(name = "uio", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check whether an unknown-input observer exists for a model.
    Check {
        #[arg(long = "from-model", value_name = "PATH")]
        from_model: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
        /// Write the full report as JSON.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Design an observer from a model or from a recorded trajectory.
    Design {
        #[arg(long = "from-model", value_name = "PATH", conflicts_with = "from_data", required_unless_present = "from_data")]
        from_model: Option<PathBuf>,
        #[arg(long = "from-data", value_name = "PATH", requires = "dims")]
        from_data: Option<PathBuf>,
        /// Dimensions `n,m,p[,r]` of the recorded plant.
        #[arg(long, value_name = "n,m,p[,r]")]
        dims: Option<String>,
        #[command(flatten)]
        tuning: Tuning,
        #[command(flatten)]
        gain: GainArgs,
        /// Output file for the observer document (stdout if absent).
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Run a seeded experiment on a model and record the trajectory.
    Collect {
        #[arg(long = "from-model", value_name = "PATH")]
        from_model: PathBuf,
        /// Number of samples.
        #[arg(long = "T", value_name = "N")]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        signals: SignalArgs,
        /// Initial state (zero if absent).
        #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
        x0: Option<String>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Simulate plant and observer together and summarise the estimation error.
    Simulate {
        #[arg(long = "from-model", value_name = "PATH")]
        from_model: PathBuf,
        /// Observer document written by `design`.
        #[arg(long, value_name = "PATH")]
        uio: PathBuf,
        /// Number of steps.
        #[arg(long = "T", value_name = "N", default_value_t = 50)]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        signals: SignalArgs,
        /// Initial state (seeded uniform(-1,1) if absent).
        #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
        x0: Option<String>,
        /// Initialize the observer so that the estimation error starts at zero.
        #[arg(long)]
        zero_error: bool,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Reproduce the built-in worked example end to end.
    DemoPaper {
        #[command(flatten)]
        gain: GainArgs,
        #[command(flatten)]
        tuning: Tuning,
        /// Simulation horizon for the error trace.
        #[arg(long = "T", value_name = "N", default_value_t = commands::DEMO_HORIZON)]
        t: usize,
        #[arg(long, hide = true)]
        corrupt_fixture: bool,
    },
}

#[derive(Debug, Args)]
struct Tuning {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative rank tolerance (default: machine epsilon).
    #[arg(long = "tol-rank", value_name = "X")]
    tol_rank: Option<f64>,
    #[arg(long = "schur-margin", value_name = "X")]
    schur_margin: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Gain {
    Riccati,
    Place,
}

#[derive(Debug, Args)]
struct GainArgs {
    #[arg(long, value_enum)]
    gain: Option<Gain>,
    /// Observer poles for `--gain place`, e.g. `0,0,0.5` or `0.2+0.1i,0.2-0.1i`.
    #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
    poles: Option<String>,
}

#[derive(Debug, Args)]
struct SignalArgs {
    /// Uniform bounds for the known input.
    #[arg(long = "input-bounds", value_name = "LO,HI", default_value = "-4,4", allow_hyphen_values = true)]
    input_bounds: String,
    /// Uniform bounds for the disturbance.
    #[arg(long = "disturbance-bounds", value_name = "LO,HI", default_value = "-3,3", allow_hyphen_values = true)]
    disturbance_bounds: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
