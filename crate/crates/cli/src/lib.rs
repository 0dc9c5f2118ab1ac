//! Batch front end for measurement selection: configuration loading, FIM
//! assembly with an atom cache, single solves, budget sweeps with warm-start
//! chaining, and selection reports.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::{load_config, parse_budgets, LoadedConfig, ObjectiveTag, RunConfig, SensitivitySource, SweepSpec};
pub use error::{CliError, Result};
pub use pipeline::{
    cmd_fim, cmd_solve, cmd_sweep, prepare, run_sweep, solve_tag, sweep_violations, write_sweep_outputs, FimSummary,
    ParetoRecord, Seeds, SolutionDocument, SolveRun, SweepOutcome, Workspace,
};
pub use report::{cmd_report, SelectionColumn, SelectionTable};
