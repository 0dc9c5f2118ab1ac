use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fisheropt_cli::{cmd_fim, cmd_report, cmd_solve, cmd_sweep, parse_budgets, CliError, ObjectiveTag};

#[derive(Parser)]
#[command(name = "fisheropt", version, about = "Budget-constrained measurement selection by Fisher information")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build (or reload) the FIM atoms and write a full-selection summary.
    Fim {
        config: PathBuf,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one objective at one budget and write its solution document.
    Solve {
        config: PathBuf,
        #[arg(long, value_enum)]
        objective: ObjectiveTag,
        /// Budget in whole dollars.
        #[arg(long)]
        budget: i64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep budgets for every configured objective.
    Sweep {
        config: PathBuf,
        /// `a:b:step` (inclusive) or a comma-separated list; overrides the config.
        #[arg(long)]
        budgets: Option<String>,
        /// Run budgets concurrently (disables warm-start chaining).
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        no_warm_chain: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render selection tables from the solution documents in a directory.
    Report { dir: PathBuf },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fim { config, out } => {
            let s = cmd_fim(&config, out.as_deref())?;
            print!("{}", s.render());
        }
        Command::Solve {
            config,
            objective,
            budget,
            out,
        } => {
            let doc = cmd_solve(&config, objective, budget, out.as_deref())?;
            println!(
                "{objective} at ${budget}: {} trace {} logdet {} cost {} | {}",
                doc.solution.status, doc.solution.trace, doc.solution.logdet, doc.solution.cost, doc.summary
            );
        }
        Command::Sweep {
            config,
            budgets,
            parallel,
            no_warm_chain,
            out,
        } => {
            let budgets = budgets.as_deref().map(parse_budgets).transpose()?;
            let outcome = cmd_sweep(&config, budgets, parallel, no_warm_chain, out.as_deref())?;
            for r in &outcome.records {
                println!(
                    "{:>8} {:<8} trace {:<14.6} logdet {:<12.6} cost {:<8} {:<15} {}",
                    r.budget,
                    r.objective,
                    r.trace,
                    r.logdet,
                    r.cost,
                    r.status,
                    r.error.as_deref().unwrap_or(&r.selection)
                );
            }
        }
        Command::Report { dir } => {
            for t in cmd_report(&dir)? {
                println!("{}", t.render_text());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
