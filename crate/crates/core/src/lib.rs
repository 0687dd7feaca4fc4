//! Semi-Lagrangian value and policy iteration for infinite-horizon hybrid
//! optimal control.
//!
//! A [`HybridProblem`] is discretized on a per-mode uniform [`Grid`]; the
//! discrete Bellman operator lives in [`bellman`], its one-dimensional matrix
//! form in [`assembly`], and the VI/PI/MPI drivers in [`solvers`].
//! [`synthesis`] turns a converged field into closed-loop trajectories and
//! [`benchmarks`] builds the four reference problems.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod assembly;
pub mod bellman;
pub mod benchmarks;
mod error;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod solvers;
pub mod synthesis;

pub use assembly::{assemble_b, assemble_c, assemble_d, assemble_e, greedy_policy, AssembledSystem, Policy};
pub use bellman::{bellman_apply, m_op, n_op, qvi_residual, sigma_op, Branch, NodeDecision, Scheme, SchemeParams};
pub use benchmarks::BenchmarkSpec;
pub use error::{Error, Result};
pub use grid::{interpolate, Grid, ValueField};
pub use linalg::{matvec, solve, SparseMatrix};
pub use model::{
    evaluate_cost, validate_problem, ControlSet, ControlStrategy, Destination, Diagnostic, HybridProblem, Severity,
};
pub use solvers::{
    check_subsolution, default_initial_field, modified_policy_iteration, modified_policy_iteration_observed,
    policy_evaluation, policy_iteration, policy_iteration_observed, run_solver, value_iteration, ConvergenceReport,
    Method, SolverConfig, StoppingNorm,
};
pub use synthesis::{synthesize, JumpKind, Sample, SwitchEvent, Trajectory};
