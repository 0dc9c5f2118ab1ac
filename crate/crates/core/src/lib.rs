//! Measurement selection by Fisher-information criteria.
//!
//! The crate builds the mixed-integer formulation that chooses static-cost
//! sensors and dynamic-cost samples under a budget, and ships the solvers
//! needed to optimize it without an external solver: a bounded-variable
//! simplex ([`lp`]), branch-and-bound for the trace (A-optimality) MILP
//! ([`milp`]), and Frank-Wolfe / outer approximation for the log-determinant
//! (D-optimality) criterion ([`doptsolve`]).
//!
//! Data flow: [`sensmodel`] produces the stacked sensitivity matrix, [`catalog`]
//! defines the candidate measurements and their error covariance, [`fimatoms`]
//! turns both into per-item information contributions, and [`moproblem`]
//! assembles the constrained selection problem consumed by the solvers.

pub mod cases;
pub mod catalog;
pub mod doptsolve;
pub mod error;
pub mod fimatoms;
pub mod lp;
pub mod milp;
pub mod moproblem;
pub mod sensmodel;
pub mod symmat;

pub use catalog::{ErrorCovariance, ItemIndex, ItemKind, MeasurementCatalog};
pub use doptsolve::{FwConfig, OaConfig};
pub use error::{Error, Result};
pub use fimatoms::{FimAtoms, FimValue};
pub use milp::BnbConfig;
pub use moproblem::{MoProblem, Objective, SelectionLimits, Solution, SolveStatus};
pub use sensmodel::{KineticsConfig, SensitivityMatrix};
pub use symmat::{LowerTriVector, SymMatrix};
