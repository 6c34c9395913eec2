//! The time-consistent leader solution.
//!
//! Once the follower's reply is substituted in, the leader's stagewise
//! first-order conditions couple the state with three backward variables: her
//! own adjoint `Z`, an adjoint `Zbar` tracking how the reply map reacts to
//! her controls, and the follower's feedforward variable `pi`. Stacking them
//! as `bZ = [Z; Zbar; pi]` (length `3n`) linearizes everything: the stack
//! obeys `bZ_k = bH_k X_k + bK_k v_k + bL_k bZ_{k+1}`, the state obeys
//! `X_{k+1} = Atil X_k + Btil v_k + bCt' bZ_{k+1}`, and stationarity reads
//! `0 = F_k v_k + O_k X_k + bD_k' bZ_{k+1}`.
//!
//! A backward recursion produces matrices `T_k` with `bZ_k = T_k X_k` along
//! the solution, which decouples the two-point system: each forward step only
//! needs one solve with the closure matrix `I - (bCt' - Btil F^{-1} bD') T_{k+1}`.
//!
//! The per-stage sums `sum_{i=t0}^{k-1} D_i^(k)` make `F_k`, `O_k`, `bD_k`
//! depend on the base time `t0`, so [`leader_coeffs`] takes it explicitly and
//! [`solve_equilibrium`] always rebuilds the tables at its own start stage.

use crate::follower::{riccati, FollowerCoeffs};
use crate::game_model::{cost, GameSpec, Player, Stages, Trajectory};
use crate::matkit::{self, Mat};
use crate::{GateMatrix, SolveError};

/// Sensitivity matrices `D_i^(k)`: how the follower's feedforward variable at
/// stage `i` shows up in her reply at stage `k`.
///
/// `at(k)` holds `D_i^(k)` for `i = t0, ..., k-1` in order, so `at(t0)` is
/// empty.
pub type DTable = Stages<Vec<Mat>>;

/// Builds `D_i^(k) = C_k Atil_{k-1} ... Atil_{i+1} Ctil_i' Atil_{i+1}' ... Atil_{k-1}'`
/// for `t0 <= i < k <= N-1`, with empty products read as the identity.
pub fn d_matrices(fc: &FollowerCoeffs, t0: usize) -> DTable {
    let n_end = fc.p.end() - 1;
    assert!(t0 >= fc.m.first(), "coefficients must cover base time {}", t0);
    let mut table = Vec::with_capacity(n_end - t0);
    for k in t0..n_end {
        let mut row = vec![Mat::zeros(0, 0); k - t0];
        let cmat = fc.cmat.at(k);
        let mut chain = Mat::identity(cmat.cols());
        for i in (t0..k).rev() {
            let left = &(cmat * &chain) * &fc.c_til.at(i).transpose();
            row[i - t0] = &left * &chain.transpose();
            chain = &chain * fc.a_til.at(i);
        }
        table.push(row);
    }
    Stages::new(t0, table)
}

/// Stacked-system coefficients of the leader's problem from one base time.
#[derive(Debug, Clone)]
pub struct LeaderCoeffs {
    /// Base time `t0` of the per-stage sums.
    pub base_time: usize,
    /// `D_i^(k)` table, see [`d_matrices`].
    pub dik: DTable,
    /// `sum_{i=t0}^{k-1} D_i^(k)` per stage, m2 by n.
    pub sum_d: Stages<Mat>,
    /// Stationarity weight on `v_k`, m2 by m2 (not symmetric in general).
    pub f: Stages<Mat>,
    /// Stationarity weight on `X_k`, m2 by n.
    pub o: Stages<Mat>,
    /// State feed of the backward stack, 3n by n.
    pub bh: Stages<Mat>,
    /// Control feed of the backward stack, 3n by m2.
    pub bk: Stages<Mat>,
    /// Terminal value of the backward stack, 3n by n.
    pub bg: Mat,
    /// Transition of the backward stack, 3n by 3n.
    pub bl: Stages<Mat>,
    /// Adjoint feed of the forward equation, 3n by n.
    pub bct: Stages<Mat>,
    /// Adjoint gain in the reply formula, 3n by m1.
    pub bs: Stages<Mat>,
    /// Adjoint weight in the stationarity relation, 3n by m2.
    pub bd: Stages<Mat>,
}

/// Assembles every stacked coefficient for a leader planning from `t0`.
pub fn leader_coeffs(spec: &GameSpec, fc: &FollowerCoeffs, t0: usize) -> LeaderCoeffs {
    let n = spec.n;
    let n_end = spec.n_horizon;
    let dik = d_matrices(fc, t0);
    let zero_nn = Mat::zeros(n, n);
    let zero_nm2 = Mat::zeros(n, spec.m2);
    let zero_nm1 = Mat::zeros(n, spec.m1);
    let at = spec.a.transpose();

    let mut sum_d = Vec::new();
    let mut f = Vec::new();
    let mut o = Vec::new();
    let mut bh = Vec::new();
    let mut bk = Vec::new();
    let mut bl = Vec::new();
    let mut bct = Vec::new();
    let mut bs = Vec::new();
    let mut bd = Vec::new();

    for k in t0..n_end {
        let h1 = fc.h1.at(k);
        let h2 = fc.h2.at(k);
        let h3 = fc.h3.at(k);
        let a_til = fc.a_til.at(k);
        let b_til = fc.b_til.at(k);
        let h1t_r2 = &h1.transpose() * &spec.r2;
        let h3t_r2 = &h3.transpose() * &spec.r2;

        let mut sd = Mat::zeros(spec.m2, n);
        for d in dik.at(k) {
            sd = &sd + d;
        }
        let sd_t = sd.transpose();

        f.push(&(&spec.w2 + &(&h2.transpose() * &(&spec.r2 * h2))) + &(&sd * &(&h1t_r2 * h2)));
        o.push(&(&h2.transpose() * &(&spec.r2 * h1)) + &(&sd * &(&h1t_r2 * h1)));
        bh.push(Mat::vstack(&[&spec.q2, &(&h1t_r2 * h1), &zero_nn]));
        bk.push(Mat::vstack(&[&zero_nm2, &(&h1t_r2 * h2), &fc.cmat.at(k).transpose()]));
        bl.push(Mat::from_blocks(&[
            vec![&at, &zero_nn, &zero_nn],
            vec![&-&(&h1.transpose() * &spec.b1.transpose()), &a_til.transpose(), &(&h1t_r2 * h3)],
            vec![&zero_nn, &zero_nn, &a_til.transpose()],
        ]));
        bct.push(Mat::vstack(&[&zero_nn, &zero_nn, &fc.c_til.at(k).transpose()]));
        bs.push(Mat::vstack(&[&zero_nm1, &zero_nm1, &h3.transpose()]));
        bd.push(Mat::vstack(&[
            &(b_til - &(&spec.b1 * &(h1 * &sd_t))),
            &(b_til + &(a_til * &sd_t)),
            &(&(&h3t_r2 * h2) + &(&h3t_r2 * &(h1 * &sd_t))),
        ]));
        sum_d.push(sd);
    }

    LeaderCoeffs {
        base_time: t0,
        dik,
        sum_d: Stages::new(t0, sum_d),
        f: Stages::new(t0, f),
        o: Stages::new(t0, o),
        bh: Stages::new(t0, bh),
        bk: Stages::new(t0, bk),
        bg: Mat::vstack(&[&spec.g2, &Mat::zeros(n, n), &Mat::zeros(n, n)]),
        bl: Stages::new(t0, bl),
        bct: Stages::new(t0, bct),
        bs: Stages::new(t0, bs),
        bd: Stages::new(t0, bd),
    }
}

struct StageOps {
    /// `F_k^{-1} O_k`, m2 by n.
    f_inv_o: Mat,
    /// `F_k^{-1} bD_k'`, m2 by 3n.
    f_inv_dt: Mat,
    /// `closure^{-1} (Atil - Btil F^{-1} O)` where the closure matrix is
    /// `I - (bCt' - Btil F^{-1} bD') T_{k+1}`; the one-step state map.
    fwd: Mat,
    f_cond: f64,
    closure_cond: f64,
}

fn t_pass(
    lc: &LeaderCoeffs,
    spec: &GameSpec,
    fc: &FollowerCoeffs,
) -> Result<(Stages<Mat>, Vec<StageOps>), SolveError> {
    let t0 = lc.base_time;
    let n_end = spec.n_horizon;

    for k in t0..n_end {
        if matkit::invert(lc.f.at(k)).is_err() {
            return Err(SolveError::NotSolvable { stage: k, matrix: GateMatrix::F });
        }
    }

    let stages = n_end - t0;
    let mut t_tab = vec![Mat::zeros(0, 0); stages + 1];
    let mut ops: Vec<Option<StageOps>> = (0..stages).map(|_| None).collect();
    t_tab[stages] = lc.bg.clone();
    for k in (t0..n_end).rev() {
        let i = k - t0;
        let fk = lc.f.at(k);
        let f_inv_o = matkit::solve_linear(fk, lc.o.at(k))
            .map_err(|_| SolveError::NotSolvable { stage: k, matrix: GateMatrix::F })?;
        let f_inv_dt = matkit::solve_linear(fk, &lc.bd.at(k).transpose())
            .map_err(|_| SolveError::NotSolvable { stage: k, matrix: GateMatrix::F })?;
        let t_next = &t_tab[i + 1];
        let closure = &Mat::identity(spec.n)
            - &(&(&lc.bct.at(k).transpose() - &(fc.b_til.at(k) * &f_inv_dt)) * t_next);
        let drift = fc.a_til.at(k) - &(fc.b_til.at(k) * &f_inv_o);
        let fwd = matkit::solve_linear(&closure, &drift)
            .map_err(|_| SolveError::NotSolvable { stage: k, matrix: GateMatrix::Closure })?;
        let t_k = &(&(&(lc.bl.at(k) - &(lc.bk.at(k) * &f_inv_dt)) * t_next) * &fwd)
            + &(lc.bh.at(k) - &(lc.bk.at(k) * &f_inv_o));
        t_tab[i] = t_k;
        ops[i] = Some(StageOps {
            f_cond: matkit::condition_estimate(fk),
            closure_cond: matkit::condition_estimate(&closure),
            f_inv_o,
            f_inv_dt,
            fwd,
        });
    }
    let ops = ops.into_iter().map(Option::unwrap).collect();
    Ok((Stages::new(t0, t_tab), ops))
}

/// Runs the backward recursion for the decoupling matrices `T_k`, from
/// `T_N = bG` down to the base time of `lc`.
///
/// Every `F_k` is checked for invertibility up front (scanning forward, so
/// the reported stage is the earliest bad one); afterwards a failed closure
/// solve reports the stage it occurred at. Either failure means no unique
/// equilibrium exists.
pub fn t_recursion(lc: &LeaderCoeffs, spec: &GameSpec, fc: &FollowerCoeffs) -> Result<Stages<Mat>, SolveError> {
    t_pass(lc, spec, fc).map(|(t_tab, _)| t_tab)
}

/// Per-stage conditioning of the two matrices inverted by the solver.
#[derive(Debug, Clone)]
pub struct StageGate {
    pub k: usize,
    pub f_cond: f64,
    pub closure_cond: f64,
}

/// Equilibrium play from one starting point, with the backward stack along it.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    /// Stage the forward pass started at. Equal to the leader tables' base
    /// time except in the table-inheriting variant.
    pub base_time: usize,
    /// Follower controls on `{base_time, ..., N-1}`.
    pub u: Stages<Mat>,
    /// Leader controls on `{base_time, ..., N-1}`.
    pub v: Stages<Mat>,
    /// States on `{base_time, ..., N}`.
    pub x: Stages<Mat>,
    /// Stacked backward variable `T_k X_k`, 3n-vectors on `{base_time, ..., N}`.
    pub bz: Stages<Mat>,
    /// Leader adjoint block of `bz`.
    pub z: Stages<Mat>,
    /// Reply-sensitivity adjoint block of `bz`.
    pub zbar: Stages<Mat>,
    /// Follower feedforward block of `bz`.
    pub pi: Stages<Mat>,
    /// Follower's realized cost.
    pub j1: f64,
    /// Leader's realized cost.
    pub j2: f64,
    pub diagnostics: Vec<StageGate>,
}

/// Computes the time-consistent solution from `(k0, x0)`.
///
/// Rebuilds the follower recursion and all leader tables with base time `k0`,
/// runs the `T` recursion, then rolls the closed system forward:
/// `X_{k+1}` from the closure solve, `v_k = -F^{-1}(O X_k + bD' T_{k+1} X_{k+1})`,
/// and `u_k = -(H1 X_k + H2 v_k + bS' T_{k+1} X_{k+1})`, which is the
/// follower's reply evaluated along the solution.
pub fn solve_equilibrium(spec: &GameSpec, k0: usize, x0: &Mat) -> Result<EquilibriumSolution, SolveError> {
    solve_equilibrium_with_base(spec, k0, k0, x0)
}

/// Like [`solve_equilibrium`], but the leader tables keep base time `t0`
/// while the forward pass starts at `(k0, x0)` for some `k0 >= t0`.
///
/// With `k0 == t0` this is exactly [`solve_equilibrium`]. With `k0 > t0` it
/// answers a different question: what the original planner's tables prescribe
/// when restarted mid-horizon, which is the comparison the re-solve
/// diagnostics need.
pub fn solve_equilibrium_with_base(
    spec: &GameSpec,
    t0: usize,
    k0: usize,
    x0: &Mat,
) -> Result<EquilibriumSolution, SolveError> {
    let n_end = spec.n_horizon;
    assert!(t0 >= spec.t && t0 <= k0 && k0 < n_end, "base {} start {} outside range", t0, k0);
    assert!(x0.is_col(spec.n), "x0 must be an n-vector");
    let fc = riccati(spec)?;
    let lc = leader_coeffs(spec, &fc, t0);
    let (t_tab, ops) = t_pass(&lc, spec, &fc)?;

    let mut x = Vec::with_capacity(n_end - k0 + 1);
    let mut u = Vec::with_capacity(n_end - k0);
    let mut v = Vec::with_capacity(n_end - k0);
    let mut bz = Vec::with_capacity(n_end - k0 + 1);
    bz.push(t_tab.at(k0) * x0);
    let mut xk = x0.clone();
    for k in k0..n_end {
        let op = &ops[k - t0];
        let x_next = &op.fwd * &xk;
        let bz_next = t_tab.at(k + 1) * &x_next;
        let vk = -&(&(&op.f_inv_o * &xk) + &(&op.f_inv_dt * &bz_next));
        let uk = -&(&(&(fc.h1.at(k) * &xk) + &(fc.h2.at(k) * &vk))
            + &(&lc.bs.at(k).transpose() * &bz_next));
        x.push(xk);
        u.push(uk);
        v.push(vk);
        bz.push(bz_next);
        xk = x_next;
    }
    x.push(xk);

    let n = spec.n;
    let z = bz.iter().map(|m| m.row_block(0, n)).collect::<Vec<_>>();
    let zbar = bz.iter().map(|m| m.row_block(n, n)).collect::<Vec<_>>();
    let pi = bz.iter().map(|m| m.row_block(2 * n, n)).collect::<Vec<_>>();
    let u = Stages::new(k0, u);
    let v = Stages::new(k0, v);
    let x = Stages::new(k0, x);
    let j1 = cost(spec, Player::Follower, k0, x.at(k0), &u, &v);
    let j2 = cost(spec, Player::Leader, k0, x.at(k0), &u, &v);
    Ok(EquilibriumSolution {
        base_time: k0,
        u,
        v,
        x,
        bz: Stages::new(k0, bz),
        z: Stages::new(k0, z),
        zbar: Stages::new(k0, zbar),
        pi: Stages::new(k0, pi),
        j1,
        j2,
        diagnostics: ops
            .iter()
            .enumerate()
            .map(|(i, op)| StageGate { k: t0 + i, f_cond: op.f_cond, closure_cond: op.closure_cond })
            .filter(|gate| gate.k >= k0)
            .collect(),
    })
}

/// Leader adjoint along a fixed state path: `Z_l = Q2 X_l + A' Z_{l+1}`,
/// `Z_N = G2 X_N`.
pub fn leader_adjoint(spec: &GameSpec, x: &Stages<Mat>) -> Stages<Mat> {
    let k0 = x.first();
    let n_end = x.end() - 1;
    let mut z = vec![Mat::zeros(spec.n, 1); n_end - k0 + 1];
    z[n_end - k0] = &spec.g2 * x.at(n_end);
    for l in (k0..n_end).rev() {
        z[l - k0] = &(&spec.q2 * x.at(l)) + &(&spec.a.transpose() * &z[l - k0 + 1]);
    }
    Stages::new(k0, z)
}

/// Reply-sensitivity adjoint rooted at stage `k`, along a fixed play.
///
/// For stages `l >= k` it runs the full driven recursion
/// `Zbar_l = H1'R2 (H1 X_l + H2 v_l + H3 pi_{l+1}) - H1'B1' Z_{l+1} + Atil' Zbar_{l+1}`
/// from `Zbar_N = 0`; below `k` the drive switches off and the value merely
/// propagates through `Atil'`. Rooting at different stages therefore changes
/// nothing at or above the later root, which is what lets one backward table
/// serve every stage's stationarity condition.
pub fn zbar_indexed(spec: &GameSpec, fc: &FollowerCoeffs, k: usize, traj: &Trajectory) -> Stages<Mat> {
    let k0 = traj.x.first();
    let n_end = traj.x.end() - 1;
    assert!(k >= k0 && k < n_end, "root stage {} outside [{}, {})", k, k0, n_end);
    let z = leader_adjoint(spec, &traj.x);
    let mut zbar = vec![Mat::zeros(spec.n, 1); n_end - k0 + 1];
    for l in (k0..n_end).rev() {
        let propagated = &fc.a_til.at(l).transpose() * &zbar[l - k0 + 1];
        zbar[l - k0] = if l >= k {
            let reply = &(&(fc.h1.at(l) * traj.x.at(l)) + &(fc.h2.at(l) * traj.v.at(l)))
                + &(fc.h3.at(l) * traj.pi.at(l + 1));
            let driven = &(&fc.h1.at(l).transpose() * &(&spec.r2 * &reply))
                - &(&fc.h1.at(l).transpose() * &(&spec.b1.transpose() * z.at(l + 1)));
            &driven + &propagated
        } else {
            propagated
        };
    }
    Stages::new(k0, zbar)
}

/// Stationarity and adjoint-agreement diagnostics for a computed solution.
#[derive(Debug, Clone)]
pub struct StationaryReport {
    /// Largest `|F_k v_k + O_k X_k + bD_k' bZ_{k+1}|` with `bZ = T X`.
    pub max_residual: f64,
    /// Same residual with `bZ` rebuilt by the raw backward recursions.
    pub max_residual_recursion: f64,
    /// Largest entrywise gap between the two `bZ` routes.
    pub max_adjoint_gap: f64,
}

/// Evaluates the stationarity relation along `sol` through two independent
/// routes: the decoupled form `bZ = T X`, and the raw backward recursions for
/// `Z`, `Zbar`, `pi` run along the solution path.
pub fn stationary_residual(
    spec: &GameSpec,
    fc: &FollowerCoeffs,
    lc: &LeaderCoeffs,
    sol: &EquilibriumSolution,
) -> StationaryReport {
    let k0 = sol.base_time;
    let n_end = spec.n_horizon;

    let traj = Trajectory {
        x: sol.x.clone(),
        u: sol.u.clone(),
        v: sol.v.clone(),
        pi: raw_pi(spec, fc, k0, &sol.v),
    };
    let z = leader_adjoint(spec, &traj.x);
    let zbar = zbar_indexed(spec, fc, k0, &traj);

    let mut max_residual = 0.0f64;
    let mut max_residual_recursion = 0.0f64;
    let mut max_adjoint_gap = 0.0f64;
    for k in k0..=n_end {
        let raw = Mat::vstack(&[z.at(k), zbar.at(k), traj.pi.at(k)]);
        max_adjoint_gap = max_adjoint_gap.max((&raw - sol.bz.at(k)).max_abs());
    }
    for k in k0..n_end {
        let decoupled = &(&(lc.f.at(k) * sol.v.at(k)) + &(lc.o.at(k) * sol.x.at(k)))
            + &(&lc.bd.at(k).transpose() * sol.bz.at(k + 1));
        max_residual = max_residual.max(decoupled.norm2());
        let raw_next = Mat::vstack(&[z.at(k + 1), zbar.at(k + 1), traj.pi.at(k + 1)]);
        let raw = &(&(lc.f.at(k) * sol.v.at(k)) + &(lc.o.at(k) * sol.x.at(k)))
            + &(&lc.bd.at(k).transpose() * &raw_next);
        max_residual_recursion = max_residual_recursion.max(raw.norm2());
    }
    StationaryReport { max_residual, max_residual_recursion, max_adjoint_gap }
}

fn raw_pi(spec: &GameSpec, fc: &FollowerCoeffs, k0: usize, v: &Stages<Mat>) -> Stages<Mat> {
    let n_end = spec.n_horizon;
    let mut pi = vec![Mat::zeros(spec.n, 1); n_end - k0 + 1];
    for k in (k0..n_end).rev() {
        pi[k - k0] = &(&fc.cmat.at(k).transpose() * v.at(k)) + &(&fc.a_til.at(k).transpose() * &pi[k - k0 + 1]);
    }
    Stages::new(k0, pi)
}
