//! Command-line front end: load a game from JSON, run the solvers and
//! verifiers, print per-stage tables to 4 decimal places, and optionally
//! write a full-precision JSON report.
//!
//! Exit codes: 0 pass, 1 check failure, 2 not solvable, 3 input error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use lqstack::equilibrium::{leader_coeffs, solve_equilibrium, EquilibriumSolution};
use lqstack::follower::{check_response_equilibrium, response, riccati, FollowerCoeffs, FD_STEP};
use lqstack::game_model::{cost, validate, GameSpec, Player, Stages};
use lqstack::matkit::Mat;
use lqstack::precommit::{solve_precommit, PrecommitSolution, INCONSISTENCY_TOL};
use lqstack::verify::{
    leader_deviation_test, time_consistency_check, variation_formula, ResolveOutcome,
    CONSISTENCY_TOL,
};
use lqstack::SolveError;

/// Largest deviation gain still read as numerical noise.
const DEVIATION_TOL: f64 = 1e-8;
/// Allowed expansion error, scaled by `1 + |direct change|`.
const VARIATION_TOL: f64 = 1e-8;
/// Allowed gap between the two forms of the expansion coefficient.
const COEFF_TOL: f64 = 1e-10;

#[derive(Parser)]
#[command(name = "lqstack", version, about = "Solvers and checks for two-player leader-follower games")]
struct Cli {
    /// Write a full-precision JSON report to this file.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a spec file's structure and list every violation.
    Validate {
        /// Game description in JSON form.
        file: PathBuf,
    },
    /// Solve the game and print the per-stage play.
    Solve {
        file: PathBuf,
        /// Solution concept to compute.
        #[arg(long, value_enum)]
        mode: Mode,
        /// Start stage followed by the state entries, replacing the file's
        /// base time and initial state.
        #[arg(long, num_args = 1.., allow_hyphen_values = true, value_name = "K0 X..")]
        at: Option<Vec<String>>,
    },
    /// Run one of the numerical verifiers against the file's game.
    Check {
        file: PathBuf,
        /// Verifier to run.
        #[arg(long, value_enum)]
        which: Which,
        /// Solution concept the verifier applies to.
        #[arg(long, value_enum, default_value_t = Mode::Equilibrium)]
        mode: Mode,
        /// Seed for the probe generator.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random probes per check.
        #[arg(long, default_value_t = 20)]
        probes: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Precommit,
    Equilibrium,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Precommit => "precommit",
            Mode::Equilibrium => "equilibrium",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Consistency,
    Deviations,
    Variation,
}

#[derive(Serialize)]
struct RunReport {
    command: String,
    spec_digest: String,
    tool_version: String,
    status: Status,
    payload: Payload,
}

#[derive(Serialize)]
#[serde(tag = "kind")]
enum Status {
    Solved,
    NotSolvable { stage: usize, matrix: String },
    NotUnique,
    Violations,
}

#[derive(Serialize)]
#[serde(untagged)]
enum Payload {
    Validate { violations: Vec<String> },
    Solve(SolvePayload),
    Consistency(ConsistencyPayload),
    Deviations(DeviationsPayload),
    Variation(VariationPayload),
    Empty {},
}

#[derive(Serialize)]
struct StageRow {
    k: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    #[serde(rename = "X")]
    x: Vec<f64>,
    /// First-order optimality measure of the leader's control at this stage.
    residual: f64,
}

#[derive(Serialize)]
struct SolvePayload {
    mode: String,
    base_time: usize,
    stages: Vec<StageRow>,
    #[serde(rename = "X_terminal")]
    x_terminal: Vec<f64>,
    j1: f64,
    j2: f64,
}

#[derive(Serialize)]
struct ConsistencyRowOut {
    tau: usize,
    max_du: Option<f64>,
    max_dv: Option<f64>,
    verdict: String,
}

#[derive(Serialize)]
struct ConsistencyPayload {
    mode: String,
    tolerance: f64,
    rows: Vec<ConsistencyRowOut>,
    pass: bool,
}

#[derive(Serialize)]
struct DeviationsPayload {
    mode: String,
    probes: usize,
    seed: u64,
    follower_gain: f64,
    leader_gain: f64,
    threshold: f64,
    pass: bool,
}

#[derive(Serialize)]
struct VariationRow {
    draw: usize,
    k: usize,
    eps: f64,
    abs_error: f64,
    bound: f64,
    coeff_gap: f64,
}

#[derive(Serialize)]
struct VariationPayload {
    draws: usize,
    seed: u64,
    rows: Vec<VariationRow>,
    worst_scaled_error: f64,
    worst_coeff_gap: f64,
    pass: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: &Cli) -> Result<u8, String> {
    let (file, command_name) = match &cli.command {
        Command::Validate { file } => (file, "validate"),
        Command::Solve { file, .. } => (file, "solve"),
        Command::Check { file, .. } => (file, "check"),
    };
    let bytes = fs::read(file).map_err(|e| format!("{}: {e}", file.display()))?;
    let digest = digest_hex(&bytes);
    let text = String::from_utf8(bytes).map_err(|_| format!("{}: not valid UTF-8", file.display()))?;
    let spec = GameSpec::from_json(&text).map_err(|e| format!("{}: {e}", file.display()))?;
    let violations = validate(&spec);

    let (status, payload, exit) = match &cli.command {
        Command::Validate { .. } => cmd_validate(violations),
        Command::Solve { mode, at, .. } => {
            if !violations.is_empty() {
                return Err(bad_spec(file, &violations));
            }
            cmd_solve(&spec, *mode, at.as_deref())?
        }
        Command::Check { which, mode, seed, probes, .. } => {
            if !violations.is_empty() {
                return Err(bad_spec(file, &violations));
            }
            cmd_check(&spec, *which, *mode, *seed, *probes)
        }
    };

    let report = RunReport {
        command: command_name.to_string(),
        spec_digest: digest,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        status,
        payload,
    };
    if let Some(path) = &cli.out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
        fs::write(path, json + "\n").map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(exit)
}

fn bad_spec(file: &PathBuf, violations: &[String]) -> String {
    format!("{} is not a valid game:\n  {}", file.display(), violations.join("\n  "))
}

fn digest_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let mut hex = String::with_capacity(7 + 64);
    hex.push_str("sha256:");
    for byte in hasher.finalize() {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

fn cmd_validate(violations: Vec<String>) -> (Status, Payload, u8) {
    if violations.is_empty() {
        println!("spec is valid");
        (Status::Solved, Payload::Validate { violations }, 0)
    } else {
        for msg in &violations {
            println!("violation: {msg}");
        }
        (Status::Violations, Payload::Validate { violations }, 1)
    }
}

fn cmd_solve(spec: &GameSpec, mode: Mode, at: Option<&[String]>) -> Result<(Status, Payload, u8), String> {
    let (k0, x0) = parse_at(spec, at)?;
    let outcome = match mode {
        Mode::Precommit => solve_precommit(spec, k0, &x0).map(|plan| precommit_payload(spec, k0, &x0, plan)),
        Mode::Equilibrium => solve_equilibrium(spec, k0, &x0).map(|sol| equilibrium_payload(spec, k0, sol)),
    };
    Ok(match outcome {
        Ok(payload) => {
            print_solve(&payload);
            (Status::Solved, Payload::Solve(payload), 0)
        }
        Err(err) => refusal(err),
    })
}

fn refusal(err: SolveError) -> (Status, Payload, u8) {
    println!("{err}");
    let status = match err {
        SolveError::NotSolvable { stage, matrix } => {
            Status::NotSolvable { stage, matrix: matrix.to_string() }
        }
        SolveError::NotUnique => Status::NotUnique,
    };
    (status, Payload::Empty {}, 2)
}

fn parse_at(spec: &GameSpec, at: Option<&[String]>) -> Result<(usize, Mat), String> {
    let Some(parts) = at else {
        return Ok((spec.t, spec.x.clone()));
    };
    if parts.len() != spec.n + 1 {
        return Err(format!(
            "--at takes a stage index and {} state entries, got {} values",
            spec.n,
            parts.len()
        ));
    }
    let k0: usize = parts[0]
        .parse()
        .map_err(|_| format!("--at stage {:?} is not a stage index", parts[0]))?;
    if k0 < spec.t || k0 >= spec.n_horizon {
        return Err(format!("--at stage {} lies outside [{}, {})", k0, spec.t, spec.n_horizon));
    }
    let mut values = Vec::with_capacity(spec.n);
    for part in &parts[1..] {
        let value: f64 = part
            .parse()
            .map_err(|_| format!("--at state entry {part:?} is not a number"))?;
        if !value.is_finite() {
            return Err(format!("--at state entry {part:?} is not finite"));
        }
        values.push(value);
    }
    Ok((k0, Mat::col(&values)))
}

fn entries(m: &Mat) -> Vec<f64> {
    m.as_slice().to_vec()
}

fn fmt_slice(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn committed_cost(spec: &GameSpec, fc: &FollowerCoeffs, k0: usize, x0: &Mat, v: &Stages<Mat>) -> f64 {
    let traj = response(spec, fc, k0, x0, v);
    cost(spec, Player::Leader, k0, x0, &traj.u, v)
}

fn precommit_payload(spec: &GameSpec, k0: usize, x0: &Mat, plan: PrecommitSolution) -> SolvePayload {
    let fc = riccati(spec).expect("plan exists, so the reply map does too");
    // The committed cost is exactly quadratic in each probe, so the central
    // difference is exact at any step; a wide one keeps cancellation noise
    // down.
    let h = 1e-3;
    let mut stages = Vec::new();
    for k in k0..spec.n_horizon {
        let mut sum = 0.0;
        for j in 0..spec.m2 {
            let mut up = plan.v_hat.at(k).clone();
            up[(j, 0)] += h;
            let mut dn = plan.v_hat.at(k).clone();
            dn[(j, 0)] -= h;
            let j_up = committed_cost(spec, &fc, k0, x0, &plan.v_hat.with_replaced(k, up));
            let j_dn = committed_cost(spec, &fc, k0, x0, &plan.v_hat.with_replaced(k, dn));
            let g = (j_up - j_dn) / (2.0 * h);
            sum += g * g;
        }
        stages.push(StageRow {
            k,
            u: entries(plan.u_hat.at(k)),
            v: entries(plan.v_hat.at(k)),
            x: entries(plan.x_hat.at(k)),
            residual: sum.sqrt(),
        });
    }
    SolvePayload {
        mode: "precommit".into(),
        base_time: k0,
        stages,
        x_terminal: entries(plan.x_hat.at(spec.n_horizon)),
        j1: plan.j1,
        j2: plan.j2,
    }
}

fn equilibrium_payload(spec: &GameSpec, k0: usize, sol: EquilibriumSolution) -> SolvePayload {
    let fc = riccati(spec).expect("solution exists, so the reply map does too");
    let lc = leader_coeffs(spec, &fc, k0);
    let mut stages = Vec::new();
    for k in k0..spec.n_horizon {
        let residual = (&(&(lc.f.at(k) * sol.v.at(k)) + &(lc.o.at(k) * sol.x.at(k)))
            + &(&lc.bd.at(k).transpose() * sol.bz.at(k + 1)))
            .norm2();
        stages.push(StageRow {
            k,
            u: entries(sol.u.at(k)),
            v: entries(sol.v.at(k)),
            x: entries(sol.x.at(k)),
            residual,
        });
    }
    SolvePayload {
        mode: "equilibrium".into(),
        base_time: k0,
        stages,
        x_terminal: entries(sol.x.at(spec.n_horizon)),
        j1: sol.j1,
        j2: sol.j2,
    }
}

fn print_solve(payload: &SolvePayload) {
    println!("mode: {}  base time: {}", payload.mode, payload.base_time);
    for row in &payload.stages {
        println!(
            "k={}  X={}  u={}  v={}",
            row.k,
            fmt_slice(&row.x),
            fmt_slice(&row.u),
            fmt_slice(&row.v)
        );
    }
    let terminal = payload.base_time + payload.stages.len();
    println!("k={}  X={}", terminal, fmt_slice(&payload.x_terminal));
    println!("j1={:.4}  j2={:.4}", payload.j1, payload.j2);
}

fn cmd_check(spec: &GameSpec, which: Which, mode: Mode, seed: u64, probes: usize) -> (Status, Payload, u8) {
    match which {
        Which::Consistency => check_consistency(spec, mode),
        Which::Deviations => check_deviations(spec, mode, seed, probes),
        Which::Variation => check_variation(spec, seed, probes),
    }
}

fn check_consistency(spec: &GameSpec, mode: Mode) -> (Status, Payload, u8) {
    let rows = match mode {
        Mode::Equilibrium => {
            let sol = match solve_equilibrium(spec, spec.t, &spec.x) {
                Ok(sol) => sol,
                Err(err) => return refusal(err),
            };
            let report = match time_consistency_check(spec, &sol) {
                Ok(report) => report,
                Err(err) => return refusal(err),
            };
            report
                .rows
                .iter()
                .map(|row| match &row.rebuilt {
                    ResolveOutcome::Deviations { max_du, max_dv } => ConsistencyRowOut {
                        tau: row.tau,
                        max_du: Some(*max_du),
                        max_dv: Some(*max_dv),
                        verdict: if row.consistent { "consistent" } else { "drifts" }.into(),
                    },
                    ResolveOutcome::Failed(err) => ConsistencyRowOut {
                        tau: row.tau,
                        max_du: None,
                        max_dv: None,
                        verdict: format!("failed: {err}"),
                    },
                })
                .collect::<Vec<_>>()
        }
        Mode::Precommit => {
            let base = match solve_precommit(spec, spec.t, &spec.x) {
                Ok(plan) => plan,
                Err(err) => return refusal(err),
            };
            let mut rows = Vec::new();
            for tau in spec.t + 1..spec.n_horizon {
                match solve_precommit(spec, tau, base.x_hat.at(tau)) {
                    Ok(re) => {
                        let mut max_du = 0.0f64;
                        let mut max_dv = 0.0f64;
                        for k in tau..spec.n_horizon {
                            max_du = max_du.max((re.u_hat.at(k) - base.u_hat.at(k)).norm2());
                            max_dv = max_dv.max((re.v_hat.at(k) - base.v_hat.at(k)).norm2());
                        }
                        let consistent = max_du <= INCONSISTENCY_TOL && max_dv <= INCONSISTENCY_TOL;
                        rows.push(ConsistencyRowOut {
                            tau,
                            max_du: Some(max_du),
                            max_dv: Some(max_dv),
                            verdict: if consistent { "consistent" } else { "drifts" }.into(),
                        });
                    }
                    Err(err) => rows.push(ConsistencyRowOut {
                        tau,
                        max_du: None,
                        max_dv: None,
                        verdict: format!("failed: {err}"),
                    }),
                }
            }
            rows
        }
    };
    let pass = rows.iter().all(|row| row.verdict == "consistent");
    for row in &rows {
        match (row.max_du, row.max_dv) {
            (Some(du), Some(dv)) => {
                println!("tau={}  max_du={du:.3e}  max_dv={dv:.3e}  {}", row.tau, row.verdict)
            }
            _ => println!("tau={}  {}", row.tau, row.verdict),
        }
    }
    println!("consistency: {}", if pass { "pass" } else { "fail" });
    let tolerance = match mode {
        Mode::Equilibrium => CONSISTENCY_TOL,
        Mode::Precommit => INCONSISTENCY_TOL,
    };
    let payload = ConsistencyPayload { mode: mode.name().into(), tolerance, rows, pass };
    (Status::Solved, Payload::Consistency(payload), if pass { 0 } else { 1 })
}

/// Largest improvement any single-stage shift of the committed sequence
/// yields, with the follower re-replying to the shifted commitment and the
/// cost taken from the base time.
fn committed_deviation_gain(
    spec: &GameSpec,
    fc: &FollowerCoeffs,
    plan: &PrecommitSolution,
    probes: usize,
    seed: u64,
) -> f64 {
    let k0 = plan.base_time;
    let x0 = plan.x_hat.at(k0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_gain = f64::NEG_INFINITY;
    for k in k0..spec.n_horizon {
        let try_delta = |delta: &Mat, max_gain: &mut f64| {
            let v_probe = plan.v_hat.with_replaced(k, plan.v_hat.at(k) + delta);
            let gain = plan.j2 - committed_cost(spec, fc, k0, x0, &v_probe);
            if gain > *max_gain {
                *max_gain = gain;
            }
        };
        for j in 0..spec.m2 {
            for sign in [FD_STEP, -FD_STEP] {
                let mut delta = Mat::zeros(spec.m2, 1);
                delta[(j, 0)] = sign;
                try_delta(&delta, &mut max_gain);
            }
        }
        for _ in 0..probes {
            let mut delta = Mat::zeros(spec.m2, 1);
            for j in 0..spec.m2 {
                delta[(j, 0)] = rng.gen_range(-0.1..0.1);
            }
            try_delta(&delta, &mut max_gain);
        }
    }
    max_gain
}

fn check_deviations(spec: &GameSpec, mode: Mode, seed: u64, probes: usize) -> (Status, Payload, u8) {
    let fc = match riccati(spec) {
        Ok(fc) => fc,
        Err(err) => return refusal(err),
    };
    let (follower_gain, leader_gain) = match mode {
        Mode::Equilibrium => {
            let sol = match solve_equilibrium(spec, spec.t, &spec.x) {
                Ok(sol) => sol,
                Err(err) => return refusal(err),
            };
            let follower = check_response_equilibrium(spec, &fc, spec.t, &spec.x, &sol.v, probes, seed);
            let leader = leader_deviation_test(spec, &fc, &sol, probes, seed.wrapping_add(1));
            (follower, leader)
        }
        Mode::Precommit => {
            let plan = match solve_precommit(spec, spec.t, &spec.x) {
                Ok(plan) => plan,
                Err(err) => return refusal(err),
            };
            let follower = check_response_equilibrium(spec, &fc, spec.t, &spec.x, &plan.v_hat, probes, seed);
            let leader = committed_deviation_gain(spec, &fc, &plan, probes, seed.wrapping_add(1));
            (follower, leader)
        }
    };
    let pass = follower_gain <= DEVIATION_TOL && leader_gain <= DEVIATION_TOL;
    println!("follower deviation gain: {follower_gain:.3e}  (threshold {DEVIATION_TOL:.1e})");
    println!("leader deviation gain:   {leader_gain:.3e}  (threshold {DEVIATION_TOL:.1e})");
    println!("deviations: {}", if pass { "pass" } else { "fail" });
    let payload = DeviationsPayload {
        mode: mode.name().into(),
        probes,
        seed,
        follower_gain,
        leader_gain,
        threshold: DEVIATION_TOL,
        pass,
    };
    (Status::Solved, Payload::Deviations(payload), if pass { 0 } else { 1 })
}

fn rand_unit_col(rng: &mut ChaCha8Rng, len: usize) -> Mat {
    let mut m = Mat::zeros(len, 1);
    for r in 0..len {
        m[(r, 0)] = rng.gen_range(-1.0..1.0);
    }
    m
}

fn check_variation(spec: &GameSpec, seed: u64, probes: usize) -> (Status, Payload, u8) {
    let fc = match riccati(spec) {
        Ok(fc) => fc,
        Err(err) => return refusal(err),
    };
    let draws = probes.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut worst_scaled = 0.0f64;
    let mut worst_coeff = 0.0f64;
    let mut pass = true;
    for draw in 0..draws {
        let items = (spec.t..spec.n_horizon).map(|_| rand_unit_col(&mut rng, spec.m2)).collect();
        let v = Stages::new(spec.t, items);
        let k = rng.gen_range(spec.t..spec.n_horizon);
        let eps = 10f64.powf(rng.gen_range(-4.0..-1.0));
        let vtil = rand_unit_col(&mut rng, spec.m2);
        let rep = variation_formula(spec, &fc, k, eps, &vtil, &v, &spec.x);
        let bound = VARIATION_TOL * (1.0 + rep.lhs.abs());
        worst_scaled = worst_scaled.max(rep.abs_error / (1.0 + rep.lhs.abs()));
        worst_coeff = worst_coeff.max(rep.coeff_gap);
        if rep.abs_error > bound || rep.coeff_gap > COEFF_TOL {
            pass = false;
        }
        rows.push(VariationRow {
            draw,
            k,
            eps,
            abs_error: rep.abs_error,
            bound,
            coeff_gap: rep.coeff_gap,
        });
    }
    println!("worst scaled expansion error: {worst_scaled:.3e}  (threshold {VARIATION_TOL:.1e})");
    println!("worst coefficient gap:        {worst_coeff:.3e}  (threshold {COEFF_TOL:.1e})");
    println!("variation: {}", if pass { "pass" } else { "fail" });
    let payload = VariationPayload {
        draws,
        seed,
        rows,
        worst_scaled_error: worst_scaled,
        worst_coeff_gap: worst_coeff,
        pass,
    };
    (Status::Solved, Payload::Variation(payload), if pass { 0 } else { 1 })
}
