//! Chain state `(θ, ξ_1..ξ_N)`, the Λ-norm and run configuration.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// One element of the Scaffold Markov chain: the global parameter and the
/// per-client control variates. Control variates sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: DVector<f64>,
    pub xis: Vec<DVector<f64>>,
}

impl ChainState {
    pub fn new(theta: DVector<f64>, xis: Vec<DVector<f64>>) -> Result<Self> {
        if theta.is_empty() || xis.is_empty() {
            return Err(Error::Shape("chain state needs d >= 1 and N >= 1".into()));
        }
        if let Some(bad) = xis.iter().position(|x| x.len() != theta.len()) {
            return Err(Error::Shape(format!(
                "control variate {bad} has dimension {}, expected {}",
                xis[bad].len(),
                theta.len()
            )));
        }
        Ok(Self { theta, xis })
    }

    /// θ = `theta`, all control variates zero.
    pub fn with_zero_controls(theta: DVector<f64>, n_clients: usize) -> Self {
        let d = theta.len();
        Self {
            theta,
            xis: vec![DVector::zeros(d); n_clients],
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn n_clients(&self) -> usize {
        self.xis.len()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite()) && self.xis.iter().all(|x| x.iter().all(|v| v.is_finite()))
    }

    /// Max-abs entry of Σ_c ξ_c.
    pub fn control_sum_residual(&self) -> f64 {
        sum_vectors(&self.xis).amax()
    }

    /// Whether Σ_c ξ_c vanishes up to `1e-8 · (1 + max_c ‖ξ_c‖∞)`.
    pub fn on_state_space(&self) -> bool {
        let scale = self.xis.iter().map(|x| x.amax()).fold(0.0, f64::max);
        self.control_sum_residual() <= 1e-8 * (1.0 + scale)
    }

    /// Subtracts the mean control variate from every ξ_c.
    pub fn recenter(&mut self) {
        let mean = sum_vectors(&self.xis) / self.xis.len() as f64;
        for xi in &mut self.xis {
            *xi -= &mean;
        }
    }

    fn check_compatible(&self, other: &ChainState) -> Result<()> {
        if self.dim() != other.dim() || self.n_clients() != other.n_clients() {
            return Err(Error::Shape(format!(
                "states have (d, N) = ({}, {}) and ({}, {})",
                self.dim(),
                self.n_clients(),
                other.dim(),
                other.n_clients()
            )));
        }
        Ok(())
    }
}

/// Sums equal-length vectors with a fixed pairwise tree, so the result only
/// depends on the order of `vectors`.
pub fn sum_vectors(vectors: &[DVector<f64>]) -> DVector<f64> {
    match vectors.len() {
        0 => panic!("sum_vectors needs at least one vector"),
        1 => vectors[0].clone(),
        n => {
            let (left, right) = vectors.split_at(n / 2);
            sum_vectors(left) + sum_vectors(right)
        }
    }
}

/// Average of `vectors` using the pairwise tree of [`sum_vectors`].
pub fn mean_vectors(vectors: &[DVector<f64>]) -> DVector<f64> {
    sum_vectors(vectors) / vectors.len() as f64
}

/// ‖θ_a − θ_b‖² + (γ²H²/N) Σ_c ‖ξ_{a,c} − ξ_{b,c}‖².
pub fn lambda_norm_sq(a: &ChainState, b: &ChainState, gamma: f64, local_steps: usize) -> Result<f64> {
    a.check_compatible(b)?;
    let n = a.n_clients() as f64;
    let weight = (gamma * local_steps as f64).powi(2) / n;
    let theta_part = (&a.theta - &b.theta).norm_squared();
    let xi_part: f64 = a
        .xis
        .iter()
        .zip(&b.xis)
        .map(|(x, y)| (x - y).norm_squared())
        .sum();
    Ok(theta_part + weight * xi_part)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Scaffold,
    FedAvg,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Scaffold => "scaffold",
            Algorithm::FedAvg => "fedavg",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaffold" => Ok(Algorithm::Scaffold),
            "fedavg" => Ok(Algorithm::FedAvg),
            other => Err(Error::Parameter(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Inputs of one run. The minibatch size lives on the
/// [`Problem`](crate::objectives::Problem) since the noise covariance depends on it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gamma: f64,
    pub local_steps: usize,
    pub n_clients: usize,
    pub rounds: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
}

/// The step-size conditions under which the coupled chain contracts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConditions {
    pub gamma_below_half_inverse_l: bool,
    pub gamma_h_l_plus_mu_below_one: bool,
}

impl StepConditions {
    pub fn hold(&self) -> bool {
        self.gamma_below_half_inverse_l && self.gamma_h_l_plus_mu_below_one
    }
}

impl std::fmt::Display for StepConditions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "gamma <= 1/(2L): {}, gamma*H*(L+mu) <= 1: {}",
            self.gamma_below_half_inverse_l, self.gamma_h_l_plus_mu_below_one
        )
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Parameter(format!("step size must be positive, got {}", self.gamma)));
        }
        if self.local_steps == 0 {
            return Err(Error::Parameter("local_steps must be >= 1".into()));
        }
        if self.n_clients == 0 {
            return Err(Error::Parameter("n_clients must be >= 1".into()));
        }
        Ok(())
    }

    pub fn step_conditions(&self, mu: f64, l: f64) -> StepConditions {
        StepConditions {
            gamma_below_half_inverse_l: self.gamma <= 1.0 / (2.0 * l),
            gamma_h_l_plus_mu_below_one: self.gamma * self.local_steps as f64 * (l + mu) <= 1.0,
        }
    }
}
