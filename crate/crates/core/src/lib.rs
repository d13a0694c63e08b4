//! Finite-difference mean field games on the unit 2-torus.

// parameter checks are written `!(x > 0.0)` so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod config;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod hamiltonian;
pub mod lemmas;
pub mod solver;
pub mod sparse;
pub mod verify;

pub use config::RunConfig;
pub use cost::{CostOperator, DiscreteDensity, LocalCost, NonlocalSmoothingCost};
pub use dynamics::{HjbStepConfig, LinearSolveContract};
pub use error::{MfgError, Result};
pub use grid::{GridField, SpaceTimeField, TimeMesh, TorusGrid};
pub use hamiltonian::{NumericalHamiltonian, PowerHamiltonian, QuadArg, UpwindPart};
pub use solver::ergodic::{solve_ergodic, ErgodicProblem, ErgodicSolution};
pub use solver::evolutive::{solve_evolutive, EvolutiveProblem, EvolutiveSolution};
pub use solver::{FixedPointConfig, SolverConfig};
