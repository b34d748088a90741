mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::GlobalArgs;

#[derive(Parser, Debug)]
#[command(name = "liegal", version, about = "Lie-Galerkin control of bilinear Schrodinger systems")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Kind {
    Lgcc,
    Lgsc,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certify LGCC or LGSC at a fixed n.
    Check {
        #[arg(long, value_enum, default_value = "lgcc")]
        kind: Kind,
    },
    /// Synthesize a control for a state transfer or a unitary target.
    Synthesize {
        /// Initial state(s): `e<k>`, `Y<l>,<m>` or amplitudes `a,b,...`.
        #[arg(long = "from", required_unless_present = "unitary")]
        from: Vec<String>,
        /// Target state(s), one per initial state.
        #[arg(long = "to", required_unless_present = "unitary")]
        to: Vec<String>,
        /// Target unitary in SU(n) as a JSON matrix `{rows, cols, data}`.
        #[arg(long, conflicts_with_all = ["from", "to"])]
        unitary: Option<PathBuf>,
        /// Accuracy index of the pulse synthesis.
        #[arg(long, default_value_t = 1)]
        h: u32,
        /// Leakage replay truncation.
        #[arg(long = "replay-N")]
        replay_n: Option<usize>,
    },
    /// Propagate a control file.
    Simulate {
        /// `control.json`, `schedule.json` or `control.csv`.
        #[arg(long)]
        control: PathBuf,
        #[arg(long)]
        psi0: String,
        #[arg(long)]
        target: Option<String>,
        /// Replays at 2N and reports leakage.
        #[arg(long)]
        check_consistency: bool,
        /// Extra samples per interval.
        #[arg(long, default_value_t = 0)]
        sub_grid: usize,
        /// Keep every k-th breakpoint.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Exponents of the recorded s-norms.
        #[arg(long, value_delimiter = ',')]
        s: Vec<f64>,
    },
    /// Track a modulus or unitary curve.
    Track {
        /// JSON array of `{t, moduli}` or `{t, unitary}`.
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        psi0: Option<String>,
        #[arg(long, default_value_t = 1)]
        h: u32,
    },
    /// List the built-in models or inspect a model file.
    Models {
        /// Writes the selected model truncated at this size as a model file.
        #[arg(long)]
        export: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let res = match &cli.command {
        Command::Check { kind } => commands::check(g, *kind),
        Command::Synthesize { from, to, unitary, h, replay_n } => commands::synthesize(g, from, to, unitary.as_deref(), *h, *replay_n),
        Command::Simulate { control, psi0, target, check_consistency, sub_grid, stride, s } => {
            commands::simulate(g, control, psi0, target.as_deref(), *check_consistency, *sub_grid, *stride, s)
        }
        Command::Track { curve, psi0, h } => commands::track(g, curve, psi0.as_deref(), *h),
        Command::Models { export } => commands::models(g, *export),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
