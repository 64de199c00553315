//! Scaffold and FedAvg round operators, full runs and synchronously coupled runs.

use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::chain::{lambda_norm_sq, mean_vectors, Algorithm, ChainState, RunConfig};
use crate::datagen::fmt_f64;
use crate::error::{Error, Result};
use crate::objectives::{Batch, Problem};
use crate::optimum::OptimumCertificate;
use crate::rng::derive_stream;

/// Below this many scalar multiply-adds per round, clients run sequentially.
const PARALLEL_WORK_THRESHOLD: usize = 200_000;

/// H local steps of client `client` starting from `theta`, with an optional
/// control variate added to every gradient.
fn local_endpoint(
    problem: &Problem,
    config: &RunConfig,
    round: usize,
    client: usize,
    theta: &DVector<f64>,
    control: Option<&DVector<f64>>,
) -> DVector<f64> {
    let d = theta.len();
    let mut local = theta.clone();
    let mut grad = vec![0.0; d];
    for h in 0..config.local_steps {
        let mut rng = derive_stream(config.seed, round as u64, client as u32, h as u32).rng();
        problem.stochastic_gradient_into(client, local.as_slice(), &mut rng, &mut grad);
        match control {
            Some(xi) => {
                for ((l, g), x) in local.iter_mut().zip(&grad).zip(xi.iter()) {
                    *l -= config.gamma * (g + x);
                }
            }
            None => {
                for (l, g) in local.iter_mut().zip(&grad) {
                    *l -= config.gamma * g;
                }
            }
        }
    }
    local
}

fn round_work(problem: &Problem, config: &RunConfig) -> usize {
    let per_step = match problem.batch {
        Batch::Sampled(b) => b,
        Batch::Full => problem.clients.iter().map(|c| c.len()).max().unwrap_or(1),
    };
    problem.n_clients() * config.local_steps * per_step * problem.dim()
}

fn endpoints<F>(problem: &Problem, config: &RunConfig, f: F) -> Vec<DVector<f64>>
where
    F: Fn(usize) -> DVector<f64> + Sync + Send,
{
    let n = problem.n_clients();
    if n > 1 && round_work(problem, config) >= PARALLEL_WORK_THRESHOLD {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

fn check_shapes(problem: &Problem, config: &RunConfig, state: &ChainState) -> Result<()> {
    if state.n_clients() != problem.n_clients() || config.n_clients != problem.n_clients() {
        return Err(Error::Shape(format!(
            "state has {} clients, config {}, problem {}",
            state.n_clients(),
            config.n_clients,
            problem.n_clients()
        )));
    }
    if state.dim() != problem.dim() {
        return Err(Error::Shape(format!("state has d = {}, problem d = {}", state.dim(), problem.dim())));
    }
    Ok(())
}

/// One Scaffold round: corrected local steps, server averaging, control
/// variate update and re-centering.
pub fn scaffold_round(state: &ChainState, problem: &Problem, config: &RunConfig, round: usize) -> Result<ChainState> {
    check_shapes(problem, config, state)?;
    let locals = endpoints(problem, config, |c| {
        local_endpoint(problem, config, round, c, &state.theta, Some(&state.xis[c]))
    });
    let theta = mean_vectors(&locals);
    let inv = 1.0 / (config.gamma * config.local_steps as f64);
    let xis = state
        .xis
        .iter()
        .zip(&locals)
        .map(|(xi, local)| xi + (local - &theta) * inv)
        .collect();
    let mut next = ChainState { theta, xis };
    next.recenter();
    Ok(next)
}

/// One FedAvg round.
pub fn fedavg_round(theta: &DVector<f64>, problem: &Problem, config: &RunConfig, round: usize) -> Result<DVector<f64>> {
    if theta.len() != problem.dim() || config.n_clients != problem.n_clients() {
        return Err(Error::Shape("fedavg_round: parameter or client count mismatch".into()));
    }
    let locals = endpoints(problem, config, |c| local_endpoint(problem, config, round, c, theta, None));
    Ok(mean_vectors(&locals))
}

/// Advances `state` by one round of `config.algorithm`. FedAvg leaves the
/// control variates untouched.
pub fn step(state: &ChainState, problem: &Problem, config: &RunConfig, round: usize) -> Result<ChainState> {
    match config.algorithm {
        Algorithm::Scaffold => scaffold_round(state, problem, config, round),
        Algorithm::FedAvg => {
            check_shapes(problem, config, state)?;
            Ok(ChainState {
                theta: fedavg_round(&state.theta, problem, config, round)?,
                xis: state.xis.clone(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub round: usize,
    /// ‖θ^t − θ*‖²
    pub mse: f64,
    /// ‖X^t − X*‖²_Λ, Scaffold only.
    pub lambda_dist: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub algorithm: Algorithm,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn mse(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mse).collect()
    }

    /// `t,mse[,lambda_dist]` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let with_lambda = self.algorithm == Algorithm::Scaffold;
        let mut out = String::from(if with_lambda { "t,mse,lambda_dist\n" } else { "t,mse\n" });
        for p in &self.points {
            let _ = write!(out, "{},{}", p.round, fmt_f64(p.mse));
            if let (true, Some(l)) = (with_lambda, p.lambda_dist) {
                let _ = write!(out, ",{}", fmt_f64(l));
            }
            out.push('\n');
        }
        out
    }
}

fn divergence(round: usize, config: &RunConfig, cert: Option<&OptimumCertificate>) -> Error {
    let conditions = match cert {
        Some(c) => config.step_conditions(c.mu, c.l_smooth).to_string(),
        None => "step size conditions unknown".into(),
    };
    Error::Divergence { round, conditions }
}

/// Runs `config.rounds` rounds from θ⁰ = 0 and ξ = 0.
pub fn run(problem: &Problem, certificate: &OptimumCertificate, config: &RunConfig) -> Result<Trajectory> {
    let start = ChainState::with_zero_controls(DVector::zeros(problem.dim()), problem.n_clients());
    run_from(problem, certificate, config, start)
}

pub fn run_from(
    problem: &Problem,
    certificate: &OptimumCertificate,
    config: &RunConfig,
    start: ChainState,
) -> Result<Trajectory> {
    config.validate()?;
    if certificate.n_clients() != problem.n_clients() || certificate.dim() != problem.dim() {
        return Err(Error::Shape("certificate does not match the problem".into()));
    }
    check_shapes(problem, config, &start)?;
    let optimum = certificate.optimal_state();
    let record = |round: usize, state: &ChainState| -> Result<TrajectoryPoint> {
        let mse = (&state.theta - &certificate.theta_star).norm_squared();
        let lambda_dist = match config.algorithm {
            Algorithm::Scaffold => Some(lambda_norm_sq(state, &optimum, config.gamma, config.local_steps)?),
            Algorithm::FedAvg => None,
        };
        Ok(TrajectoryPoint { round, mse, lambda_dist })
    };
    let mut points = Vec::with_capacity(config.rounds + 1);
    let mut state = start;
    points.push(record(0, &state)?);
    for t in 0..config.rounds {
        state = step(&state, problem, config, t)?;
        if !state.is_finite() {
            return Err(divergence(t + 1, config, Some(certificate)));
        }
        points.push(record(t + 1, &state)?);
    }
    Ok(Trajectory {
        algorithm: config.algorithm,
        points,
    })
}

/// Runs two chains driven by the same random streams and returns the squared
/// Λ-distance between them after each round (including t = 0).
pub fn coupled_run(problem: &Problem, config: &RunConfig, state_a: ChainState, state_b: ChainState) -> Result<Vec<f64>> {
    config.validate()?;
    check_shapes(problem, config, &state_a)?;
    check_shapes(problem, config, &state_b)?;
    let mut a = state_a;
    let mut b = state_b;
    let mut distances = Vec::with_capacity(config.rounds + 1);
    distances.push(lambda_norm_sq(&a, &b, config.gamma, config.local_steps)?);
    for t in 0..config.rounds {
        a = step(&a, problem, config, t)?;
        b = step(&b, problem, config, t)?;
        if !a.is_finite() || !b.is_finite() {
            return Err(divergence(t + 1, config, None));
        }
        distances.push(lambda_norm_sq(&a, &b, config.gamma, config.local_steps)?);
    }
    Ok(distances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::ClientDataset;
    use crate::objectives::Loss;
    use crate::optimum::{certify, DEFAULT_TOLERANCE};
    use nalgebra::dvector;

    fn two_client_1d() -> Problem {
        let c1 = ClientDataset::new(0, vec![1.0], vec![1.0], 1).unwrap();
        let c2 = ClientDataset::new(1, vec![1.0], vec![-1.0], 1).unwrap();
        Problem::new(vec![c1, c2], Loss::Quadratic, 0.0, Batch::Full).unwrap()
    }

    fn config(algorithm: Algorithm, gamma: f64, h: usize, n: usize, rounds: usize) -> RunConfig {
        RunConfig {
            gamma,
            local_steps: h,
            n_clients: n,
            rounds,
            seed: 1,
            algorithm,
        }
    }

    #[test]
    fn hand_computed_scaffold_round() {
        let p = two_client_1d();
        let s = ChainState::with_zero_controls(dvector![1.0], 2);
        let next = scaffold_round(&s, &p, &config(Algorithm::Scaffold, 0.1, 2, 2, 1), 0).unwrap();
        assert!((next.theta[0] - 0.81).abs() < 1e-12);
        assert!((next.xis[0][0] - 0.95).abs() < 1e-12);
        assert!((next.xis[1][0] + 0.95).abs() < 1e-12);
    }

    #[test]
    fn symmetric_fedavg_round_stays_at_origin() {
        let p = two_client_1d();
        let next = fedavg_round(&dvector![0.0], &p, &config(Algorithm::FedAvg, 0.1, 2, 2, 1), 0).unwrap();
        assert!(next[0].abs() < 1e-15);
    }

    #[test]
    fn optimum_is_a_fixed_point_in_deterministic_mode() {
        let p = two_client_1d();
        let cert = certify(&p, DEFAULT_TOLERANCE).unwrap();
        let x = cert.optimal_state();
        let next = scaffold_round(&x, &p, &config(Algorithm::Scaffold, 0.1, 5, 2, 1), 0).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn zero_rounds_gives_initial_point_only() {
        let p = two_client_1d();
        let cert = certify(&p, DEFAULT_TOLERANCE).unwrap();
        let traj = run(&p, &cert, &config(Algorithm::Scaffold, 0.1, 2, 2, 0)).unwrap();
        assert_eq!(traj.points.len(), 1);
        assert_eq!(traj.points[0].mse, 0.0);
    }

    #[test]
    fn stiff_problem_diverges_with_round_reported() {
        let c = ClientDataset::new(0, vec![10.0], vec![1.0], 1).unwrap();
        let p = Problem::new(vec![c.clone(), c], Loss::Quadratic, 0.0, Batch::Full).unwrap();
        let cert = certify(&p, DEFAULT_TOLERANCE).unwrap();
        // L = 100, so 1/(2L) = 0.005; use 100 times that.
        let err = run(&p, &cert, &config(Algorithm::Scaffold, 0.5, 5, 2, 500)).unwrap_err();
        match err {
            Error::Divergence { round, conditions } => {
                assert!(round > 0);
                assert!(conditions.contains("false"));
            }
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn coupled_identical_states_stay_together() {
        let p = two_client_1d().with_batch(Batch::Sampled(1));
        let s = ChainState::with_zero_controls(dvector![0.3], 2);
        let d = coupled_run(&p, &config(Algorithm::Scaffold, 0.1, 3, 2, 20), s.clone(), s).unwrap();
        assert_eq!(d.len(), 21);
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trajectory_csv_format() {
        let p = two_client_1d();
        let cert = certify(&p, DEFAULT_TOLERANCE).unwrap();
        let traj = run(&p, &cert, &config(Algorithm::Scaffold, 0.1, 2, 2, 2)).unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,mse,lambda_dist"));
        assert_eq!(csv.lines().count(), 4);
        let fed = run(&p, &cert, &config(Algorithm::FedAvg, 0.1, 2, 2, 2)).unwrap();
        assert!(fed.to_csv().starts_with("t,mse\n0,"));
    }
}
