use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adlab::cli::{self, CliFailure, Operation};

#[derive(Parser)]
#[command(name = cli::TOOL_NAME, version, about = "Transition probabilities across spectral gaps in the adiabatic limit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Write the CSV here (plus a `.manifest`); stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads for ε grids.
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the configured propagation tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Transition probability at a single ε.
    Simulate(RunArgs),
    /// Transition probabilities over an ε grid, with a decay-law fit.
    Sweep(RunArgs),
    /// Locate eigenvalue crossings in the upper half strip.
    Crossing(RunArgs),
    /// Adiabatic-eigenvalue loop integrals around each crossing.
    LoopIntegral(RunArgs),
    /// Transport prefactors around each crossing.
    Prefactor(RunArgs),
    /// Level-line connectivity and sign checks for each crossing.
    Dissipativity(RunArgs),
    /// Optimal truncation order and residual coupling over an ε grid.
    Superadiabatic(RunArgs),
    /// Numeric probabilities against the asymptotic estimate.
    Compare(RunArgs),
    /// Fit the decay law to a previously emitted CSV.
    Fit {
        /// CSV produced by sweep, simulate, or compare.
        input: PathBuf,
        /// Write the summary here; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the centralized default settings.
    Defaults,
}

fn configured(args: &RunArgs, op: Operation) -> ExitCode {
    if let Some(jobs) = args.jobs {
        // ignore the error when a pool already exists; sizes then stay as-is
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let mut config = match cli::validate(&text) {
        Ok(c) => c,
        Err(errors) => {
            return code(cli::deliver(Err(CliFailure::Config(errors)), None));
        }
    };
    if let Some(tol) = args.tolerance {
        if tol <= 0.0 {
            eprintln!("config error: tolerance: must be positive, got {tol}");
            return ExitCode::from(2);
        }
        config.tolerance = tol;
    }
    let output = args.output.clone().or_else(|| config.output.clone());
    let result = cli::run_operation(&config, op);
    code(cli::deliver(result, output.as_deref()))
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate(a) => configured(a, Operation::Simulate),
        Command::Sweep(a) => configured(a, Operation::Sweep),
        Command::Crossing(a) => configured(a, Operation::Crossing),
        Command::LoopIntegral(a) => configured(a, Operation::LoopIntegral),
        Command::Prefactor(a) => configured(a, Operation::Prefactor),
        Command::Dissipativity(a) => configured(a, Operation::Dissipativity),
        Command::Superadiabatic(a) => configured(a, Operation::Superadiabatic),
        Command::Compare(a) => configured(a, Operation::Compare),
        Command::Fit { input, output } => {
            let text = match std::fs::read_to_string(input) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("config error: cannot read {}: {e}", input.display());
                    return ExitCode::from(2);
                }
            };
            let name = input.display().to_string();
            code(cli::deliver(cli::run_fit(&text, &name), output.as_deref()))
        }
        Command::Defaults => {
            print!("{}", cli::defaults_text());
            ExitCode::SUCCESS
        }
    }
}
