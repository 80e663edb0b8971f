//! Maximal and minimal solutions of quasilinear Dirichlet problems
//! `−div a(x, ∇u) ∋ g(u) − h(u)` with discontinuous `h`, computed by monotone
//! iteration of convex variational inequalities on P1 finite elements.

pub mod assembly;
pub mod discretization;
pub mod error;
pub mod iteration;
pub mod monotone_graph;
pub mod nonlinearity;
pub mod operator;
pub mod selftest;
pub mod verify;
pub mod vi_solver;

mod banded;

pub use assembly::DiscreteProblem;
pub use discretization::{Mesh, MeshConfig, NodalField};
pub use error::{Error, Result};
pub use iteration::{
    certify_solution, maximality_probe, random_start_fixed_points, solve_extremal, Bracket,
    Direction, SolveReport, Tolerances,
};
pub use monotone_graph::{MonotoneGraph, PiecewiseMonotone, PiecewiseSpec, Side};
pub use nonlinearity::Decomposition;
pub use operator::OperatorSpec;
pub use verify::{check_lower, check_upper, linear_bracket_helper, lower_bracket_helper};
pub use vi_solver::{solve_vi, SolverPath, ViSolution, ViTolerances};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
