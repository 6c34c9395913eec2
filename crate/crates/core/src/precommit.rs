//! The precommitted solution: the leader announces at the base time the whole
//! control sequence minimizing her cost against the follower's best reply,
//! and never revisits it.
//!
//! Re-solving from a later stage along the realized trajectory generally
//! produces a different tail, which is the failure
//! [`inconsistency_report`] quantifies.

use crate::follower::{response, riccati};
use crate::game_model::{cost, GameSpec, Player, Stages};
use crate::matkit::{self, Mat};
use crate::SolveError;

/// Gap above which two control tails count as genuinely different.
pub const INCONSISTENCY_TOL: f64 = 1e-6;

/// Leader-optimal play under full precommitment from one starting point.
#[derive(Debug, Clone)]
pub struct PrecommitSolution {
    /// Stage the plan was computed at.
    pub base_time: usize,
    /// Follower's best reply to `v_hat`, on `{base_time, ..., N-1}`.
    pub u_hat: Stages<Mat>,
    /// The leader's committed sequence, on `{base_time, ..., N-1}`.
    pub v_hat: Stages<Mat>,
    /// Realized states on `{base_time, ..., N}`.
    pub x_hat: Stages<Mat>,
    /// Follower's realized cost.
    pub j1: f64,
    /// Leader's realized cost, the minimum over committed sequences.
    pub j2: f64,
}

fn unstack(m2: usize, k0: usize, n_end: usize, stacked: &[f64]) -> Stages<Mat> {
    let items = (0..n_end - k0)
        .map(|i| Mat::col(&stacked[i * m2..(i + 1) * m2]))
        .collect();
    Stages::new(k0, items)
}

/// Minimizes the leader's cost over her whole control sequence, with the
/// follower best-responding to whatever she commits to.
///
/// In the stacked control `v` the leader's cost is exactly
/// `v' Qv + 2 l'v + c` because the follower's reply is linear in `v`, so a
/// fixed set of unit-direction evaluations recovers `Q`, `l`, `c` without
/// truncation error and the minimizer solves `Qv = -l`.
///
/// Fails with [`SolveError::NotUnique`] when `Q` is not positive definite
/// (some committed direction leaves the cost flat), or propagates
/// [`SolveError::NotSolvable`] when the follower's reply map does not exist.
pub fn solve_precommit(spec: &GameSpec, k0: usize, x0: &Mat) -> Result<PrecommitSolution, SolveError> {
    let fc = riccati(spec)?;
    let n_end = spec.n_horizon;
    assert!(k0 >= spec.t && k0 < n_end, "k0 {} outside [{}, {})", k0, spec.t, n_end);
    let dim = spec.m2 * (n_end - k0);

    let eval = |stacked: &[f64]| {
        let v = unstack(spec.m2, k0, n_end, stacked);
        let traj = response(spec, &fc, k0, x0, &v);
        cost(spec, Player::Leader, k0, x0, &traj.u, &v)
    };

    let c = eval(&vec![0.0; dim]);
    let mut plus = vec![0.0; dim];
    let mut minus = vec![0.0; dim];
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        plus[i] = eval(&e);
        e[i] = -1.0;
        minus[i] = eval(&e);
    }
    let mut q = Mat::zeros(dim, dim);
    let mut neg_l = Mat::zeros(dim, 1);
    for i in 0..dim {
        q[(i, i)] = (plus[i] + minus[i] - 2.0 * c) / 2.0;
        neg_l[(i, 0)] = -(plus[i] - minus[i]) / 4.0;
    }
    for i in 0..dim {
        for j in i + 1..dim {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            e[j] = 1.0;
            let qij = (eval(&e) - plus[i] - plus[j] + c) / 2.0;
            q[(i, j)] = qij;
            q[(j, i)] = qij;
        }
    }

    if !matkit::is_positive_definite_with(&q, 1e-10 * (1.0 + q.norm_inf())) {
        return Err(SolveError::NotUnique);
    }
    let v_stacked = matkit::solve_linear(&q, &neg_l).map_err(|_| SolveError::NotUnique)?;
    let v_hat = unstack(spec.m2, k0, n_end, v_stacked.as_slice());
    let traj = response(spec, &fc, k0, x0, &v_hat);
    let j1 = cost(spec, Player::Follower, k0, x0, &traj.u, &v_hat);
    let j2 = cost(spec, Player::Leader, k0, x0, &traj.u, &v_hat);
    Ok(PrecommitSolution { base_time: k0, u_hat: traj.u, v_hat, x_hat: traj.x, j1, j2 })
}

/// One re-solve comparison: the plan recomputed at stage `tau` against the
/// tail of the original plan.
#[derive(Debug, Clone)]
pub struct InconsistencyRow {
    pub tau: usize,
    /// Per-stage gap `|v_hat_resolved(k) - v_hat_original(k)|` for `k >= tau`.
    pub v_gaps: Stages<f64>,
    pub max_gap: f64,
    pub inconsistent: bool,
}

/// Re-solve comparisons for every intermediate stage.
#[derive(Debug, Clone)]
pub struct InconsistencyReport {
    pub rows: Vec<InconsistencyRow>,
    /// True when any stage's re-solved plan departs from the original.
    pub inconsistent: bool,
}

/// Re-solves the precommitted problem at every later stage along the realized
/// trajectory and reports how far the recomputed leader sequences drift from
/// the original plan.
pub fn inconsistency_report(spec: &GameSpec) -> Result<InconsistencyReport, SolveError> {
    let base = solve_precommit(spec, spec.t, &spec.x)?;
    let mut rows = Vec::new();
    for tau in spec.t + 1..spec.n_horizon {
        let re = solve_precommit(spec, tau, base.x_hat.at(tau))?;
        let gaps: Vec<f64> = (tau..spec.n_horizon)
            .map(|k| (re.v_hat.at(k) - base.v_hat.at(k)).norm2())
            .collect();
        let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
        rows.push(InconsistencyRow {
            tau,
            v_gaps: Stages::new(tau, gaps),
            max_gap,
            inconsistent: max_gap > INCONSISTENCY_TOL,
        });
    }
    let inconsistent = rows.iter().any(|r| r.inconsistent);
    Ok(InconsistencyReport { rows, inconsistent })
}
