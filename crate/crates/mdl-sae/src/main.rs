//! `mdl-sae` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mdl_sae::cli::{self, RecordFormat};

#[derive(Parser)]
#[command(
    name = "mdl-sae",
    about = "Train sparse autoencoders, measure description lengths, and select the MDL-optimal model",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one SAE from a TOML config and write a checkpoint.
    Train(TrainArgs),
    /// Run a sweep plan, measure DLs, and select the MDL winner.
    Sweep(SweepArgs),
    /// Measure the description length of a checkpointed model.
    Dl(DlArgs),
    /// Emit closed-form toy-model grids.
    Toy(ToyArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration with an [sae] table.
    #[arg(long)]
    config: PathBuf,
    /// Training images in IDX format.
    #[arg(long)]
    train_data: PathBuf,
    /// Held-out images in IDX format.
    #[arg(long)]
    test_data: PathBuf,
    /// Checkpoint output path; a .report.csv sibling is written too.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML sweep plan (epsilon, max_parallel, [[candidates]]).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    train_data: PathBuf,
    #[arg(long)]
    test_data: PathBuf,
    /// Output directory for pareto.csv, candidates.jsonl, selection.csv.
    #[arg(long)]
    out: PathBuf,
    /// Override the plan tolerance.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Override the plan parallelism (MDL_SAE_THREADS still caps it).
    #[arg(long)]
    max_parallel: Option<usize>,
}

#[derive(Args)]
struct DlArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Images in IDX format to measure on.
    #[arg(long)]
    data: PathBuf,
    /// Reconstruction tolerance for the precision search.
    #[arg(long)]
    epsilon: f64,
    /// Also write the record to this path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ToyArgs {
    #[command(subcommand)]
    model: ToyCommand,
}

#[derive(Subcommand)]
enum ToyCommand {
    /// Feature-splitting phase grid (symmetric p_A = p_B = p).
    Split {
        /// Fix a single p instead of a grid.
        #[arg(long)]
        p: Option<f64>,
        /// Interior grid points for p when --p is not given.
        #[arg(long, default_value_t = 99)]
        p_steps: usize,
        /// Grid points for rho over [0, 1].
        #[arg(long, default_value_t = 101)]
        rho_steps: usize,
        /// Emit the preference boundary rho*(p) instead of the grid.
        #[arg(long)]
        boundary: bool,
        /// Bisection tolerance for the boundary search.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hierarchical-coding grid over (p_A, p_B_given_A).
    Hier {
        /// Interior grid points per axis.
        #[arg(long, default_value_t = 99)]
        grid_steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), cli::CliError> {
    match cli.command {
        Command::Train(args) => cli::cmd_train(
            &args.config,
            &args.train_data,
            &args.test_data,
            &args.out,
            args.seed,
        ),
        Command::Sweep(args) => cli::cmd_sweep(
            &args.config,
            &args.train_data,
            &args.test_data,
            &args.out,
            args.epsilon,
            args.max_parallel,
        ),
        Command::Dl(args) => cli::cmd_dl(
            &args.checkpoint,
            &args.data,
            args.epsilon,
            args.out.as_deref(),
            match args.format {
                Format::Csv => RecordFormat::Csv,
                Format::Json => RecordFormat::Json,
            },
        ),
        Command::Toy(args) => match args.model {
            ToyCommand::Split { p, p_steps, rho_steps, boundary, tol, out } => {
                if boundary {
                    cli::cmd_toy_split_boundary(p_steps, tol, &out)
                } else {
                    cli::cmd_toy_split(p, p_steps, rho_steps, &out)
                }
            }
            ToyCommand::Hier { grid_steps, out } => cli::cmd_toy_hier(grid_steps, &out),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mdl-sae: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
