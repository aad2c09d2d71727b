//! Solver and diagnostics toolkit for vectorial obstacle problems whose
//! energy density has `(p,q)`-growth.
//!
//! The obstacle constraint `u >= psi` (row-wise) is handled by an exact
//! `L^1` penalty, smoothed by a softplus family `H_delta` and regularized by
//! an `eps |Du|^q` term. A warm-started `(eps, delta)` continuation ladder
//! drives both parameters to zero. A projected-gradient solver and an
//! active-set QP solver serve as independent references for the constrained
//! minimizer.
//!
//! Modules:
//! - [`integrand`]: energy densities, their `z`-gradients and hypothesis samplers.
//! - [`grid`]: box domains, P1 triangulations, nodal/element fields, field files.
//! - [`penalty`]: `H_delta`, the nested smoothed penalty and the threshold `kappa_0`.
//! - [`energy`]: discrete energy and its exact gradient.
//! - [`solver`]: descent methods, the continuation ladder and the reference solvers.
//! - [`diagnostics`]: V-function, Nikolskii seminorms, cutoff functional,
//!   Lavrentiev probe and gap-condition checks.

pub mod diagnostics;
pub mod energy;
mod error;
pub mod expr;
pub mod grid;
pub mod integrand;
pub mod penalty;
pub mod problem;
pub mod report;
pub mod solver;
mod sum;

pub use error::{Error, Result};
pub use expr::Expr;
pub use grid::{BoxDomain, ElementField, Field, Grid};
pub use integrand::{Coefficient, GrowthParams, Integrand, IntegrandKind};
pub use penalty::{KappaChoice, PenaltyParams};
pub use problem::ObstacleProblem;
pub use solver::{LadderRung, Method, SolveConfig, SolveResult};
