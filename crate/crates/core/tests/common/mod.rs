//! Shared fixtures for the integration suites: the two benchmark instances
//! and a seeded random-instance generator.
#![allow(dead_code)]

use lqstack::follower::riccati;
use lqstack::game_model::{GameSpec, Stages};
use lqstack::matkit::Mat;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Scalar three-stage benchmark: every system coefficient is 1, the leader
/// has no direct control cost at the base time but a unit one per stage, and
/// the precommitted plan is known to drift when re-solved mid-horizon.
pub fn example_scalar() -> GameSpec {
    let c = |z: f64| Mat::from_rows(&[vec![z]]);
    GameSpec {
        n: 1,
        m1: 1,
        m2: 1,
        a: c(1.0),
        b1: c(1.0),
        b2: c(1.0),
        q1: c(1.0),
        q2: c(3.0),
        r1: c(1.0),
        r2: c(0.0),
        w1: c(0.0),
        w2: c(1.0),
        g1: c(1.0),
        g2: c(2.0),
        n_horizon: 3,
        t: 0,
        x: Mat::col(&[1.0]),
    }
}

/// Planar three-stage benchmark with coupled controls and known per-stage
/// gate matrices.
pub fn example_planar() -> GameSpec {
    GameSpec {
        n: 2,
        m1: 2,
        m2: 2,
        a: Mat::from_rows(&[vec![1.0, 0.5], vec![0.3, 2.0]]),
        b1: Mat::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.2]]),
        b2: Mat::from_rows(&[vec![0.6, 2.0], vec![1.0, 1.6]]),
        q1: Mat::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.5]]),
        q2: Mat::from_rows(&[vec![0.6, 0.2], vec![0.2, 0.8]]),
        r1: Mat::from_rows(&[vec![0.8, 0.3], vec![0.3, 1.0]]),
        r2: Mat::zeros(2, 2),
        w1: Mat::from_rows(&[vec![1.25, 0.5], vec![0.5, 1.4]]),
        w2: Mat::from_rows(&[vec![1.45, 0.3], vec![0.3, 1.0]]),
        g1: Mat::from_rows(&[vec![1.0, 0.65], vec![0.65, 1.0]]),
        g2: Mat::from_rows(&[vec![0.5, -0.4], vec![-0.4, 0.5]]),
        n_horizon: 3,
        t: 0,
        x: Mat::col(&[1.0, 0.0]),
    }
}

pub fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = rng.gen_range(-1.0..1.0);
        }
    }
    m
}

pub fn rand_col(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Mat {
    let mut m = Mat::zeros(len, 1);
    for r in 0..len {
        m[(r, 0)] = scale * rng.gen_range(-1.0..1.0);
    }
    m
}

/// Random positive-semidefinite matrix built as a scaled Gram matrix.
pub fn rand_gram(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let b = rand_mat(rng, n, n);
    (&b.transpose() * &b).scale(1.0 / n as f64)
}

/// Random well-posed instance: dimensions up to 3, horizon 3 to 6, Gram
/// weights, and the follower's control weight bumped until the backward
/// recursion accepts it.
pub fn rand_spec(rng: &mut ChaCha8Rng) -> GameSpec {
    let n = rng.gen_range(1..=3usize);
    let m1 = rng.gen_range(1..=3usize);
    let m2 = rng.gen_range(1..=3usize);
    let n_horizon = rng.gen_range(3..=6usize);
    let mut spec = GameSpec {
        n,
        m1,
        m2,
        a: rand_mat(rng, n, n),
        b1: rand_mat(rng, n, m1),
        b2: rand_mat(rng, n, m2),
        q1: rand_gram(rng, n),
        q2: rand_gram(rng, n),
        r1: &rand_gram(rng, m1) + &Mat::identity(m1).scale(0.1),
        r2: rand_gram(rng, m1),
        w1: rand_gram(rng, m2),
        w2: rand_gram(rng, m2),
        g1: rand_gram(rng, n),
        g2: rand_gram(rng, n),
        n_horizon,
        t: 0,
        x: rand_col(rng, n, 1.0),
    };
    while riccati(&spec).is_err() {
        spec.r1 = &spec.r1 + &Mat::identity(m1).scale(0.1);
    }
    spec
}

/// Random leader sequence on `{k0, ..., N-1}` with entries in `(-1, 1)`.
pub fn rand_controls(rng: &mut ChaCha8Rng, spec: &GameSpec, k0: usize) -> Stages<Mat> {
    let items = (k0..spec.n_horizon).map(|_| rand_col(rng, spec.m2, 1.0)).collect();
    Stages::new(k0, items)
}

/// Perturbation size drawn log-uniformly from `[1e-4, 1e-1]`.
pub fn rand_eps(rng: &mut ChaCha8Rng) -> f64 {
    10f64.powf(rng.gen_range(-4.0..-1.0))
}
