//! `pstrat`: Bayesian longitudinal principal stratification for outcomes
//! truncated by death — simulate, fit, summarize, ppc, report.

use clap::{Parser, Subcommand};

use pstrat_cli::commands;
use pstrat_cli::CliError;

#[derive(Parser)]
#[command(
    name = "pstrat",
    version,
    about = "Bayesian longitudinal principal stratification for outcomes truncated by death",
    long_about = "Enumerates longitudinal principal strata under monotonicity, fits the chained \
multinomial/logistic model by HMC on the analytically marginalized posterior, and estimates \
survivor average causal effects (SACEs).\n\nExit codes: 0 success, 2 validation failure, \
3 diagnostics failure under --strict."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel plus truth file from a generator spec.
    Simulate(commands::simulate::SimulateArgs),
    /// Fit the marginalized posterior by HMC and persist draws.
    Fit(commands::fit::FitArgs),
    /// Summarize draws: stratum membership, SACEs, or dataset descriptives.
    Summarize(commands::summarize::SummarizeArgs),
    /// Posterior predictive checks on replicated panels.
    Ppc(commands::ppc::PpcArgs),
    /// Full report: stratum table, SACE tables, diagnostics (text + JSON).
    Report(commands::report::ReportArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(args) => commands::simulate::run(args),
        Command::Fit(args) => commands::fit::run(args),
        Command::Summarize(args) => commands::summarize::run(args),
        Command::Ppc(args) => commands::ppc::run(args),
        Command::Report(args) => commands::report::run(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
