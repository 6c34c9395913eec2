//! Backward recursion for the follower's stagewise-optimal response and the
//! reduced system the leader faces once that response is substituted in.
//!
//! With `M_k = B1^T P_{k+1} B1 + R1` positive definite at every stage, the
//! follower's best reply to a leader sequence `v` is
//! `u_k = -(H1_k X_k + H2_k v_k + H3_k pi_{k+1})`, where `pi` solves a
//! backward equation driven only by `v`. Substituting the reply turns the
//! dynamics into `X_{k+1} = Atil_k X_k + Btil_k v_k + Ctil_k pi_{k+1}`.

use crate::game_model::{cost, simulate, GameSpec, Stages, Trajectory, Player};
use crate::matkit::{self, Mat};
use crate::{GateMatrix, SolveError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Step used by every central finite-difference gradient in this crate.
pub const FD_STEP: f64 = 1e-5;

/// Per-stage coefficients of the follower's response map.
///
/// `p` lives on `{t, ..., N}` with `p_N = G1`; everything else lives on
/// `{t, ..., N-1}`.
#[derive(Debug, Clone)]
pub struct FollowerCoeffs {
    /// Value matrices of the follower's problem, n by n, symmetric.
    pub p: Stages<Mat>,
    /// Gate matrices `B1^T P_{k+1} B1 + R1`, m1 by m1, positive definite.
    pub m: Stages<Mat>,
    /// State gain `M^{-1} B1^T P_{k+1} A`, m1 by n.
    pub h1: Stages<Mat>,
    /// Leader-control gain `M^{-1} B1^T P_{k+1} B2`, m1 by m2.
    pub h2: Stages<Mat>,
    /// Adjoint gain `M^{-1} B1^T`, m1 by n.
    pub h3: Stages<Mat>,
    /// Closed-loop state matrix `A - B1 H1`, n by n.
    pub a_til: Stages<Mat>,
    /// Closed-loop leader input matrix `B2 - B1 H2`, n by m2.
    pub b_til: Stages<Mat>,
    /// Closed-loop adjoint input matrix `-B1 H3`, n by n.
    pub c_til: Stages<Mat>,
    /// Driver `B2^T P_{k+1} Atil` of the backward `pi` equation, m2 by n.
    pub cmat: Stages<Mat>,
}

/// Runs the follower's Riccati recursion backward from `P_N = G1`.
///
/// Fails with [`SolveError::NotSolvable`] naming the first stage (scanning
/// backward from `N-1`) where `M_k` is not positive definite; the response
/// map is undefined from that stage on.
pub fn riccati(spec: &GameSpec) -> Result<FollowerCoeffs, SolveError> {
    let t = spec.t;
    let n_end = spec.n_horizon;
    let stages = n_end - t;
    let mut p = vec![Mat::zeros(0, 0); stages + 1];
    let mut m = vec![Mat::zeros(0, 0); stages];
    let mut h1 = m.clone();
    let mut h2 = m.clone();
    let mut h3 = m.clone();
    let mut a_til = m.clone();
    let mut b_til = m.clone();
    let mut c_til = m.clone();
    let mut cmat = m.clone();

    let b1t = spec.b1.transpose();
    let b2t = spec.b2.transpose();
    p[stages] = spec.g1.clone();
    for k in (t..n_end).rev() {
        let i = k - t;
        let p_next = &p[i + 1];
        let b1t_p = &b1t * p_next;
        let mk = &(&b1t_p * &spec.b1) + &spec.r1;
        if !matkit::is_positive_definite(&mk) {
            return Err(SolveError::NotSolvable { stage: k, matrix: GateMatrix::M });
        }
        let gate = |rhs: Mat| {
            matkit::solve_linear(&mk, &rhs)
                .map_err(|_| SolveError::NotSolvable { stage: k, matrix: GateMatrix::M })
        };
        let b1t_p_a = &b1t_p * &spec.a;
        let h1k = gate(b1t_p_a.clone())?;
        let h2k = gate(&b1t_p * &spec.b2)?;
        let h3k = gate(b1t.clone())?;
        let pk = &(&spec.q1 + &(&(&spec.a.transpose() * p_next) * &spec.a))
            - &(&b1t_p_a.transpose() * &h1k);
        let a_tilk = &spec.a - &(&spec.b1 * &h1k);
        b_til[i] = &spec.b2 - &(&spec.b1 * &h2k);
        c_til[i] = -&(&spec.b1 * &h3k);
        cmat[i] = &(&b2t * p_next) * &a_tilk;
        p[i] = pk.symmetrized();
        m[i] = mk;
        h1[i] = h1k;
        h2[i] = h2k;
        h3[i] = h3k;
        a_til[i] = a_tilk;
    }
    Ok(FollowerCoeffs {
        p: Stages::new(t, p),
        m: Stages::new(t, m),
        h1: Stages::new(t, h1),
        h2: Stages::new(t, h2),
        h3: Stages::new(t, h3),
        a_til: Stages::new(t, a_til),
        b_til: Stages::new(t, b_til),
        c_til: Stages::new(t, c_til),
        cmat: Stages::new(t, cmat),
    })
}

/// Plays the follower's response to the leader sequence `v` from `(k0, x0)`.
///
/// Solves the backward `pi` equation (which never sees the state, so it is
/// computable up front), rolls the reduced dynamics forward, and recovers
/// `u_k = -(H1 X_k + H2 v_k + H3 pi_{k+1})`.
///
/// # Panics
/// Panics if `fc` does not cover `k0`, `v` does not cover `{k0, ..., N-1}`,
/// or dimensions disagree with the spec.
pub fn response(spec: &GameSpec, fc: &FollowerCoeffs, k0: usize, x0: &Mat, v: &Stages<Mat>) -> Trajectory {
    let n_end = spec.n_horizon;
    assert!(fc.p.first() <= k0 && k0 < n_end, "coefficients must cover stage {}", k0);
    assert!(v.first() <= k0 && v.end() >= n_end, "v must cover stages {}..{}", k0, n_end);
    assert!(x0.is_col(spec.n), "x0 must be an n-vector");

    let mut pi = vec![Mat::zeros(spec.n, 1); n_end - k0 + 1];
    for k in (k0..n_end).rev() {
        assert!(v.at(k).is_col(spec.m2), "v at stage {} must be an m2-vector", k);
        pi[k - k0] = &(&fc.cmat.at(k).transpose() * v.at(k)) + &(&fc.a_til.at(k).transpose() * &pi[k - k0 + 1]);
    }

    let mut x = Vec::with_capacity(n_end - k0 + 1);
    let mut u = Vec::with_capacity(n_end - k0);
    let mut xk = x0.clone();
    for k in k0..n_end {
        let pi_next = &pi[k - k0 + 1];
        let vk = v.at(k);
        u.push(-&(&(&(fc.h1.at(k) * &xk) + &(fc.h2.at(k) * vk)) + &(fc.h3.at(k) * pi_next)));
        let next = &(&(fc.a_til.at(k) * &xk) + &(fc.b_til.at(k) * vk)) + &(fc.c_til.at(k) * pi_next);
        x.push(xk);
        xk = next;
    }
    x.push(xk);

    Trajectory {
        x: Stages::new(k0, x),
        u: Stages::new(k0, u),
        v: v.tail(k0),
        pi: Stages::new(k0, pi),
    }
}

/// Largest cost improvement any single-stage deviation in `u` achieves.
///
/// For each stage `k`, the follower's cost from `(k, X_k)` with the given
/// control values is compared against the same play with only `u_k` replaced;
/// later controls keep their values while the state follows the perturbed
/// dynamics. Probes are the finite-difference stencil around `u_k` plus
/// `probes` random perturbations of size up to 0.1. A positive return means
/// some deviation strictly improves on `u`.
pub fn deviation_gain(
    spec: &GameSpec,
    k0: usize,
    x0: &Mat,
    u: &Stages<Mat>,
    v: &Stages<Mat>,
    probes: usize,
    seed: u64,
) -> f64 {
    let states = simulate(spec, k0, x0, u, v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_gain = f64::NEG_INFINITY;
    for k in k0..spec.n_horizon {
        let xk = states.at(k);
        let base = cost(spec, Player::Follower, k, xk, u, v);
        let try_delta = |delta: &Mat, max_gain: &mut f64| {
            let probed = u.with_replaced(k, u.at(k) + delta);
            let gain = base - cost(spec, Player::Follower, k, xk, &probed, v);
            if gain > *max_gain {
                *max_gain = gain;
            }
        };
        for j in 0..spec.m1 {
            for sign in [FD_STEP, -FD_STEP] {
                let mut delta = Mat::zeros(spec.m1, 1);
                delta[(j, 0)] = sign;
                try_delta(&delta, &mut max_gain);
            }
        }
        for _ in 0..probes {
            let mut delta = Mat::zeros(spec.m1, 1);
            for j in 0..spec.m1 {
                delta[(j, 0)] = rng.gen_range(-0.1..0.1);
            }
            try_delta(&delta, &mut max_gain);
        }
    }
    max_gain
}

/// Checks that the response to `v` admits no profitable single-stage
/// deviation, returning the largest gain found (see [`deviation_gain`]).
pub fn check_response_equilibrium(
    spec: &GameSpec,
    fc: &FollowerCoeffs,
    k0: usize,
    x0: &Mat,
    v: &Stages<Mat>,
    probes: usize,
    seed: u64,
) -> f64 {
    let traj = response(spec, fc, k0, x0, v);
    deviation_gain(spec, k0, x0, &traj.u, v, probes, seed)
}
