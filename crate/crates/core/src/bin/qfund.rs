use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qfund::run::{run, Command, Grid, RunError, RunFlags, EXIT_IO};
use qfund::scenario::load_scenario;

#[derive(Parser)]
#[command(name = "qfund", version, about = "Quadratic funding calculations on TOML scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Funding, welfare and utilities for the fixed [contributions]
    Fund(Common),
    /// Nash equilibrium of the private-contribution game, per good
    Equilibrium(Common),
    /// Welfare-maximizing funding level, per good
    Optimal(Common),
    /// Welfare curve W(F) on a funding grid
    Welfare(Common),
    /// Scan lever exponents q for the optimality identity
    ScanQ(Common),
    /// Residuals of the matching functional equation
    VerifyCi(Common),
    /// Residuals of the uniqueness ODEs for the scenario mechanism
    VerifyOde(Common),
    /// Power-series solution of the weight ODE from [series]
    SeriesDemo(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Directory for report.json and CSV tables; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    /// start:stop:step or a comma list
    #[arg(long)]
    grid: Option<Grid>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Fund(c) => (Command::Fund, c),
        Cmd::Equilibrium(c) => (Command::Equilibrium, c),
        Cmd::Optimal(c) => (Command::Optimal, c),
        Cmd::Welfare(c) => (Command::Welfare, c),
        Cmd::ScanQ(c) => (Command::ScanQ, c),
        Cmd::VerifyCi(c) => (Command::VerifyCi, c),
        Cmd::VerifyOde(c) => (Command::VerifyOde, c),
        Cmd::SeriesDemo(c) => (Command::SeriesDemo, c),
    };
    match execute(command, &common) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command, common: &Common) -> Result<i32, RunError> {
    let scenario = load_scenario(&common.scenario)?;
    let flags = RunFlags {
        tol: common.tol,
        max_sweeps: common.max_sweeps,
        grid: common.grid.clone(),
    };
    let output = run(command, &scenario, &flags)?;
    match &common.out {
        Some(dir) => {
            if let Err(e) = output.write_to(dir) {
                eprintln!("error: cannot write to {}: {e}", dir.display());
                return Ok(EXIT_IO);
            }
        }
        None => print!("{}", output.report.to_json()),
    }
    if output.exit_code() != 0 {
        eprintln!("warning: equilibrium solver hit the sweep limit");
    }
    Ok(output.exit_code())
}
