//! Solvers for finite-horizon deterministic linear-quadratic leader-follower
//! (Stackelberg) games, together with numerical verifiers for the identities
//! the solvers rely on.
//!
//! Two open-loop solution concepts are implemented:
//!
//! * [`precommit::solve_precommit`] computes the classic precommitted solution,
//!   in which the leader minimizes once at the initial pair and never revises.
//!   [`precommit::inconsistency_report`] demonstrates that re-solving at a later
//!   stage generally changes the answer.
//! * [`equilibrium::solve_equilibrium`] computes the stage-wise equilibrium
//!   solution, in which neither player can lower their cost by deviating at any
//!   single stage given the follower's response map. It is obtained by lifting
//!   the leader's stationarity system into a block recursion that decouples the
//!   coupled forward-backward equations.
//!
//! The [`verify`] module checks the supporting identities numerically: the
//! second-order variation expansion of the leader's cost, the per-stage
//! optimality of both players, and the behavior of the solutions under
//! re-solving at later stages.

pub mod equilibrium;
pub mod follower;
pub mod game_model;
pub mod matkit;
pub mod precommit;
pub mod verify;

use std::fmt;

/// Matrix whose invertibility or definiteness gates solvability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMatrix {
    /// Per-stage normal matrix of the follower's problem; must be positive definite.
    M,
    /// Per-stage quadratic coefficient of the leader's stationarity system; must be invertible.
    F,
    /// Closure matrix of the decoupled forward pass; must be invertible.
    Closure,
}

impl fmt::Display for GateMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateMatrix::M => write!(f, "M"),
            GateMatrix::F => write!(f, "F"),
            GateMatrix::Closure => write!(f, "I-(...)T"),
        }
    }
}

/// Failure modes of the solvers.
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum SolveError {
    /// A solvability gate failed; no unique solution exists at this stage.
    #[error("not solvable: matrix {matrix} fails its solvability condition at stage {stage}")]
    NotSolvable { stage: usize, matrix: GateMatrix },
    /// The precommitment quadratic is singular; the minimizer is not unique.
    #[error("no unique precommitted solution: the leader's reduced quadratic is singular")]
    NotUnique,
}
