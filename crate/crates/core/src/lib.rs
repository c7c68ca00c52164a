//! Weighted total-variation minimization with drift and curvature on masked
//! square grids: a primal-dual solver with duality-gap certificates, a
//! smoothed reference minimizer, certificate checks, and level-set tools.
//!
//! Everything numerical is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the type for callers who do not care.

// `!(x > 0)` is the NaN-rejecting form throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calculus;
pub mod certify;
pub mod config;
pub mod error;
pub mod field;
pub mod grid;
pub mod io;
pub mod levelset;
pub(crate) mod linalg;
pub mod oracle;
pub mod problem;
pub mod scalar;
pub mod scenarios;
pub mod solver;

pub use error::{Error, Result};

pub type GridSpec64 = grid::GridSpec<f64>;
pub type ScalarField64 = field::ScalarField<f64>;
pub type VectorField64 = field::VectorField<f64>;
pub type BoundaryTrace64 = field::BoundaryTrace<f64>;
pub type DualField64 = field::DualField<f64>;
pub type ProblemSpec64 = problem::ProblemSpec<f64>;
pub type SolverConfig64 = solver::SolverConfig<f64>;
pub type Certificate64 = solver::Certificate<f64>;
pub type Scenario64 = config::Scenario<f64>;

pub type GridSpec32 = grid::GridSpec<f32>;
pub type ScalarField32 = field::ScalarField<f32>;
pub type VectorField32 = field::VectorField<f32>;
pub type BoundaryTrace32 = field::BoundaryTrace<f32>;
pub type DualField32 = field::DualField<f32>;
pub type ProblemSpec32 = problem::ProblemSpec<f32>;
pub type SolverConfig32 = solver::SolverConfig<f32>;
pub type Certificate32 = solver::Certificate<f32>;
pub type Scenario32 = config::Scenario<f32>;
