//! The global minimizer θ* and the problem constants evaluated around it.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::objectives::{Batch, Loss, Problem, LOGISTIC_THIRD_MAX};
use crate::rng::seeded;
use crate::stationary::sylvester_solve;

pub const DEFAULT_TOLERANCE: f64 = 1e-12;
const MAX_NEWTON_ITERATIONS: usize = 200;
const MAX_HALVINGS: usize = 60;

/// Newton's method on the average loss with step halving until the gradient
/// norm decreases. Stops once ‖∇f(θ)‖ ≤ `tolerance`.
pub fn solve_optimum(problem: &Problem, tolerance: f64) -> Result<DVector<f64>> {
    if !(tolerance > 0.0) {
        return Err(Error::Parameter(format!("solver tolerance must be positive, got {tolerance}")));
    }
    let mut theta = DVector::zeros(problem.dim());
    let mut grad = problem.global_gradient(&theta);
    let mut grad_norm = grad.norm();
    for _ in 0..MAX_NEWTON_ITERATIONS {
        if grad_norm <= tolerance {
            return Ok(theta);
        }
        let hessian = problem.global_hessian(&theta);
        let step = hessian
            .cholesky()
            .ok_or_else(|| Error::Parameter("hessian is not positive definite".into()))?
            .solve(&grad);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let candidate = &theta - &step * alpha;
            let candidate_grad = problem.global_gradient(&candidate);
            let candidate_norm = candidate_grad.norm();
            if candidate_norm < grad_norm {
                theta = candidate;
                grad = candidate_grad;
                grad_norm = candidate_norm;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if grad_norm <= tolerance {
        return Ok(theta);
    }
    Err(Error::SolverFailure {
        iterations: MAX_NEWTON_ITERATIONS,
        grad_norm,
    })
}

/// Constants of the problem at its optimum.
#[derive(Debug, Clone)]
pub struct OptimumCertificate {
    pub theta_star: DVector<f64>,
    pub grad_norm_at_star: f64,
    /// Ideal control variates ξ*_c = −∇f_c(θ*).
    pub xi_star: Vec<DVector<f64>>,
    /// Minimum client Hessian eigenvalue at θ*, floored at λ.
    pub mu: f64,
    /// True when `mu` is only evaluated at θ* (logistic).
    pub mu_is_local: bool,
    /// A curvature bound valid for every θ: `mu` for quadratics, λ for logistic.
    pub mu_global: f64,
    pub l_smooth: f64,
    pub q_third: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub sigma_star_sq: f64,
    /// Least-squares slope of max_c tr Σ_ε,c(θ) − σ*² against ‖θ − θ*‖².
    pub beta_proxy: f64,
    pub sigma_eps_per_client: Vec<DMatrix<f64>>,
    pub sigma_eps_avg: DMatrix<f64>,
    pub hessian_star: DMatrix<f64>,
    pub client_hessians_star: Vec<DMatrix<f64>>,
    /// A Σ_ε(θ*): solution X of ∇²f(θ*) X + X ∇²f(θ*) = Σ_ε(θ*).
    pub resolvent_noise: DMatrix<f64>,
    /// ∇³f(θ*)[A Σ_ε(θ*)].
    pub third_at_resolvent: DVector<f64>,
    pub loss: Loss,
    pub batch: Batch,
}

fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

fn operator_norm(m: &DMatrix<f64>) -> f64 {
    let (lo, hi) = eigen_range(m);
    lo.abs().max(hi.abs())
}

const BETA_PROBES: usize = 20;

pub fn build_certificate(problem: &Problem, theta_star: &DVector<f64>) -> Result<OptimumCertificate> {
    let n = problem.n_clients();
    let nf = n as f64;
    let d = problem.dim();
    let lambda = problem.l2_weight;

    let grads: Vec<DVector<f64>> = (0..n).map(|c| problem.full_gradient(c, theta_star)).collect();
    let global_grad = crate::chain::mean_vectors(&grads);
    let xi_star: Vec<DVector<f64>> = grads.iter().map(|g| -g).collect();

    let client_hessians_star: Vec<DMatrix<f64>> = (0..n).map(|c| problem.hessian(c, theta_star)).collect();
    let mut hessian_star = DMatrix::zeros(d, d);
    for h in &client_hessians_star {
        hessian_star += h;
    }
    hessian_star /= nf;

    let mu = client_hessians_star
        .iter()
        .map(|h| eigen_range(h).0)
        .fold(f64::INFINITY, f64::min)
        .max(lambda);

    let l_smooth = match problem.loss {
        Loss::Quadratic => client_hessians_star.iter().map(|h| eigen_range(h).1).fold(0.0, f64::max),
        Loss::Logistic => problem
            .clients
            .iter()
            .map(|c| {
                let x = c.features_matrix();
                let gram = x.transpose() * &x / (4.0 * c.len() as f64);
                lambda + eigen_range(&gram).1
            })
            .fold(0.0, f64::max),
    };

    let q_third = match problem.loss {
        Loss::Quadratic => 0.0,
        Loss::Logistic => problem
            .clients
            .iter()
            .map(|c| {
                let cubes: f64 = (0..c.len())
                    .map(|i| c.row(i).iter().map(|v| v * v).sum::<f64>().powf(1.5))
                    .sum();
                LOGISTIC_THIRD_MAX * cubes / c.len() as f64
            })
            .fold(0.0, f64::max),
    };

    let zeta1 = (grads.iter().map(|g| (g - &global_grad).norm_squared()).sum::<f64>() / nf).sqrt();
    let zeta2 = (client_hessians_star
        .iter()
        .map(|h| operator_norm(&(h - &hessian_star)).powi(2))
        .sum::<f64>()
        / nf)
        .sqrt();

    let sigma_eps_per_client: Vec<DMatrix<f64>> = (0..n).map(|c| problem.noise_covariance_at(c, theta_star)).collect();
    let mut sigma_eps_avg = DMatrix::zeros(d, d);
    for s in &sigma_eps_per_client {
        sigma_eps_avg += s;
    }
    sigma_eps_avg /= nf;
    let sigma_star_sq = sigma_eps_per_client.iter().map(|s| s.trace()).fold(0.0, f64::max);

    let beta_proxy = beta_proxy(problem, theta_star, sigma_star_sq);

    let resolvent_noise = sylvester_solve(&hessian_star, &sigma_eps_avg)?;
    let mut third_at_resolvent = DVector::zeros(d);
    for c in 0..n {
        third_at_resolvent += problem.third_derivative_apply(c, theta_star, &resolvent_noise)?;
    }
    third_at_resolvent /= nf;

    let (mu_is_local, mu_global) = match problem.loss {
        Loss::Quadratic => (false, mu),
        Loss::Logistic => (true, lambda),
    };

    Ok(OptimumCertificate {
        theta_star: theta_star.clone(),
        grad_norm_at_star: global_grad.norm(),
        xi_star,
        mu,
        mu_is_local,
        mu_global,
        l_smooth,
        q_third,
        zeta1,
        zeta2,
        sigma_star_sq,
        beta_proxy,
        sigma_eps_per_client,
        sigma_eps_avg,
        hessian_star,
        client_hessians_star,
        resolvent_noise,
        third_at_resolvent,
        loss: problem.loss,
        batch: problem.batch,
    })
}

/// Probes θ at random directions and radii in (0, 1] around θ*.
fn beta_proxy(problem: &Problem, theta_star: &DVector<f64>, sigma_star_sq: f64) -> f64 {
    if problem.batch == Batch::Full {
        return 0.0;
    }
    let mut rng = seeded(0x6265_7461);
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..BETA_PROBES {
        let dir = DVector::<f64>::from_fn(problem.dim(), |_, _| rng.sample(StandardNormal));
        let radius = (k + 1) as f64 / BETA_PROBES as f64;
        let theta = theta_star + dir.normalize() * radius;
        let worst = (0..problem.n_clients())
            .map(|c| problem.noise_covariance_at(c, &theta).trace())
            .fold(0.0, f64::max);
        let r2 = radius * radius;
        num += (worst - sigma_star_sq) * r2;
        den += r2 * r2;
    }
    (num / den).max(0.0)
}

/// Solves for θ* and builds its certificate.
pub fn certify(problem: &Problem, tolerance: f64) -> Result<OptimumCertificate> {
    let theta_star = solve_optimum(problem, tolerance)?;
    build_certificate(problem, &theta_star)
}

impl OptimumCertificate {
    pub fn n_clients(&self) -> usize {
        self.xi_star.len()
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    /// The optimal chain state X* = (θ*, ξ*_1, …, ξ*_N).
    pub fn optimal_state(&self) -> crate::chain::ChainState {
        crate::chain::ChainState {
            theta: self.theta_star.clone(),
            xis: self.xi_star.clone(),
        }
    }

    /// Flat `key = value` report.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let f = crate::datagen::fmt_f64;
        let _ = writeln!(out, "loss = {}", self.loss.name());
        let _ = writeln!(out, "mu = {}", f(self.mu));
        let _ = writeln!(out, "mu_is_local_estimate = {}", self.mu_is_local);
        let _ = writeln!(out, "mu_global = {}", f(self.mu_global));
        let _ = writeln!(out, "L = {}", f(self.l_smooth));
        let _ = writeln!(out, "Q = {}", f(self.q_third));
        let _ = writeln!(out, "zeta1 = {}", f(self.zeta1));
        let _ = writeln!(out, "zeta2 = {}", f(self.zeta2));
        let _ = writeln!(out, "sigma_star_sq = {}", f(self.sigma_star_sq));
        let _ = writeln!(out, "beta_proxy = {}", f(self.beta_proxy));
        let _ = writeln!(out, "beta_is_estimate = true");
        let _ = writeln!(out, "grad_norm_at_star = {}", f(self.grad_norm_at_star));
        out
    }
}
