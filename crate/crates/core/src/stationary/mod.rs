//! Empirical moments of the stationary distribution of the Scaffold chain and
//! the first-order predictions they are compared against.

mod sylvester;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::algorithms::step;
use crate::chain::{Algorithm, ChainState, RunConfig};
use crate::datagen::fmt_f64;
use crate::error::{Error, Result};
use crate::optimum::OptimumCertificate;
use crate::rng::seeded;

pub use sylvester::sylvester_solve;

pub const MIN_SAMPLES: usize = 100;
pub const SE_BATCHES: usize = 20;
pub const MAX_XI_PAIRS: usize = 64;

/// ceil(16 / (γ μ H)) rounds.
pub fn default_burn_in(gamma: f64, mu: f64, local_steps: usize) -> usize {
    (16.0 / (gamma * mu * local_steps as f64)).ceil() as usize
}

#[derive(Debug, Clone)]
pub struct StationaryEstimate {
    pub burn_in_rounds: usize,
    pub n_samples: usize,
    pub thinning: usize,
    pub gamma: f64,
    pub local_steps: usize,
    /// Mean of θ − θ*.
    pub bias_theta: DVector<f64>,
    /// Second moment of θ − θ*, symmetrized.
    pub cov_theta: DMatrix<f64>,
    /// Cross moments of θ − θ* and ξ_c − ξ*_c, one per client.
    pub cov_theta_xi: Vec<DMatrix<f64>>,
    /// Moments of (ξ_c − ξ*_c, ξ_c' − ξ*_c') for c = c' and a sampled pair subset.
    pub cov_xi: BTreeMap<(usize, usize), DMatrix<f64>>,
    /// Batch-means standard errors of `bias_theta`.
    pub se_bias: DVector<f64>,
}

fn xi_pairs(n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|c| (c + 1..n).map(move |c2| (c, c2))).collect();
    if pairs.len() > MAX_XI_PAIRS {
        pairs.shuffle(&mut seeded(seed ^ 0x7061_6972));
        pairs.truncate(MAX_XI_PAIRS);
        pairs.sort_unstable();
    }
    pairs
}

/// Runs `burn_in` rounds (default [`default_burn_in`]) from θ = 0, ξ = 0 and
/// then averages `n_samples` states taken every `thinning` rounds.
pub fn estimate_stationary(
    problem: &crate::objectives::Problem,
    certificate: &OptimumCertificate,
    config: &RunConfig,
    burn_in: Option<usize>,
    n_samples: usize,
    thinning: Option<usize>,
) -> Result<StationaryEstimate> {
    config.validate()?;
    if config.algorithm != Algorithm::Scaffold {
        return Err(Error::Parameter("stationary estimation is defined for the Scaffold chain".into()));
    }
    if n_samples < MIN_SAMPLES {
        return Err(Error::Parameter(format!("n_samples must be >= {MIN_SAMPLES}, got {n_samples}")));
    }
    let thinning = thinning.unwrap_or(1).max(1);
    let burn_in = burn_in.unwrap_or_else(|| default_burn_in(config.gamma, certificate.mu, config.local_steps));
    let n = problem.n_clients();
    let d = problem.dim();

    let mut state = ChainState::with_zero_controls(DVector::zeros(d), n);
    let mut round = 0usize;
    let advance = |state: &mut ChainState, round: &mut usize| -> Result<()> {
        *state = step(state, problem, config, *round)?;
        *round += 1;
        if !state.is_finite() {
            let conditions = config.step_conditions(certificate.mu, certificate.l_smooth).to_string();
            return Err(Error::Divergence { round: *round, conditions });
        }
        Ok(())
    };
    for _ in 0..burn_in {
        advance(&mut state, &mut round)?;
    }

    let pairs = xi_pairs(n, config.seed);
    let mut sum_theta = DVector::zeros(d);
    let mut sum_theta2 = DMatrix::zeros(d, d);
    let mut sum_theta_xi = vec![DMatrix::zeros(d, d); n];
    let mut sum_xi_diag = vec![DMatrix::zeros(d, d); n];
    let mut sum_xi_pairs = vec![DMatrix::zeros(d, d); pairs.len()];
    let mut batch_sums = vec![DVector::zeros(d); SE_BATCHES];
    let mut batch_counts = vec![0usize; SE_BATCHES];

    for k in 0..n_samples {
        for _ in 0..thinning {
            advance(&mut state, &mut round)?;
        }
        let dt = &state.theta - &certificate.theta_star;
        let dxi: Vec<DVector<f64>> = state.xis.iter().zip(&certificate.xi_star).map(|(x, s)| x - s).collect();
        sum_theta += &dt;
        sum_theta2.ger(1.0, &dt, &dt, 1.0);
        for c in 0..n {
            sum_theta_xi[c].ger(1.0, &dt, &dxi[c], 1.0);
            sum_xi_diag[c].ger(1.0, &dxi[c], &dxi[c], 1.0);
        }
        for (acc, &(c, c2)) in sum_xi_pairs.iter_mut().zip(&pairs) {
            acc.ger(1.0, &dxi[c], &dxi[c2], 1.0);
        }
        let batch = k * SE_BATCHES / n_samples;
        batch_sums[batch] += &dt;
        batch_counts[batch] += 1;
    }

    let inv = 1.0 / n_samples as f64;
    let bias_theta = sum_theta * inv;
    let cov_theta = sum_theta2 * inv;
    let cov_theta = (&cov_theta + cov_theta.transpose()) * 0.5;
    let mut cov_xi = BTreeMap::new();
    for (c, m) in sum_xi_diag.into_iter().enumerate() {
        cov_xi.insert((c, c), m * inv);
    }
    for (m, pair) in sum_xi_pairs.into_iter().zip(pairs) {
        cov_xi.insert(pair, m * inv);
    }

    let means: Vec<DVector<f64>> = batch_sums
        .into_iter()
        .zip(&batch_counts)
        .map(|(s, &k)| s / k as f64)
        .collect();
    let grand = crate::chain::mean_vectors(&means);
    let b = SE_BATCHES as f64;
    let se_bias = DVector::from_fn(d, |j, _| {
        let var = means.iter().map(|m| (m[j] - grand[j]).powi(2)).sum::<f64>() / (b - 1.0);
        (var / b).sqrt()
    });

    Ok(StationaryEstimate {
        burn_in_rounds: burn_in,
        n_samples,
        thinning,
        gamma: config.gamma,
        local_steps: config.local_steps,
        bias_theta,
        cov_theta,
        cov_theta_xi: sum_theta_xi.into_iter().map(|m| m * inv).collect(),
        cov_xi,
        se_bias,
    })
}

/// Leading-order stationary moments as functions of the noise covariance at θ*.
#[derive(Debug, Clone)]
pub struct FirstOrderPrediction {
    pub gamma: f64,
    pub local_steps: usize,
    pub n_clients: usize,
    pub cov_theta: DMatrix<f64>,
    pub cov_theta_xi: Vec<DMatrix<f64>>,
    /// Diagonal blocks Σ̄ξ_{c,c}.
    pub cov_xi_diag: Vec<DMatrix<f64>>,
    pub bias: DVector<f64>,
    sigma_eps: Vec<DMatrix<f64>>,
    sigma_avg: DMatrix<f64>,
}

impl FirstOrderPrediction {
    /// Σ̄ξ_{c,c'} for any pair; the diagonal formula when c = c'.
    pub fn cov_xi(&self, c: usize, c2: usize) -> DMatrix<f64> {
        if c == c2 {
            return self.cov_xi_diag[c].clone();
        }
        let scale = 1.0 / (self.n_clients as f64 * self.local_steps as f64);
        (&self.sigma_avg - &self.sigma_eps[c] - &self.sigma_eps[c2]) * scale
    }
}

/// Evaluates the first-order expansions of the stationary covariances and
/// the bias, with remainders dropped.
pub fn predict_first_order(
    certificate: &OptimumCertificate,
    gamma: f64,
    local_steps: usize,
    n_clients: usize,
) -> Result<FirstOrderPrediction> {
    if !(gamma > 0.0) || local_steps == 0 || n_clients == 0 {
        return Err(Error::Parameter("prediction needs gamma > 0, H >= 1, N >= 1".into()));
    }
    let nf = n_clients as f64;
    let hf = local_steps as f64;
    let a_sigma = &certificate.resolvent_noise;
    let sigma = &certificate.sigma_eps_avg;
    let scale = gamma / nf;

    let cov_theta = a_sigma * scale;
    let cov_theta_xi = certificate
        .client_hessians_star
        .iter()
        .zip(&certificate.sigma_eps_per_client)
        .map(|(hc, sc)| (a_sigma * (hc - &certificate.hessian_star) + (sc - sigma)) * scale)
        .collect();
    let cov_xi_diag = certificate
        .sigma_eps_per_client
        .iter()
        .map(|sc| sc * ((1.0 - 2.0 / nf) / hf) + sigma * (1.0 / (nf * hf)))
        .collect();
    let newton = certificate
        .hessian_star
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Parameter("hessian at the optimum is not positive definite".into()))?
        .solve(&certificate.third_at_resolvent);
    let bias = newton * (-gamma / (2.0 * nf));

    Ok(FirstOrderPrediction {
        gamma,
        local_steps,
        n_clients,
        cov_theta,
        cov_theta_xi,
        cov_xi_diag,
        bias,
        sigma_eps: certificate.sigma_eps_per_client.clone(),
        sigma_avg: sigma.clone(),
    })
}

/// Parameter recipe for reaching E‖θ − θ*‖² ≤ ε², unit constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityRecipe {
    pub gamma: f64,
    /// Clamped to at least 1.
    pub local_steps: f64,
    pub rounds: f64,
    pub grads_per_client: f64,
    /// Largest client count keeping linear speed-up; infinite when Q = 0.
    pub n_max: f64,
    pub exceeds_n_max: bool,
}

/// The recipe assumes θ⁰ = 0.
pub fn complexity_recipe(certificate: &OptimumCertificate, epsilon: f64, n_clients: usize) -> Result<ComplexityRecipe> {
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let nf = n_clients as f64;
    let mu = certificate.mu;
    let l = certificate.l_smooth;
    let s2 = certificate.sigma_star_sq;
    let q = certificate.q_third;
    let eps2 = epsilon * epsilon;
    let zeta2 = certificate.zeta2;
    let hetero_min = if zeta2 > 0.0 { (mu / zeta2).min(1.0) } else { 1.0 };
    let hetero_max = if zeta2 > 0.0 { (zeta2 / mu).max(1.0) } else { 1.0 };
    let init = certificate.theta_star.norm_squared() + (certificate.zeta1 / l).powi(2);
    let psi0 = init + s2 / (l * mu);

    let gamma = nf * mu * eps2 / s2;
    let local_steps = (s2 * hetero_min / (nf * l * mu * eps2)).max(1.0);
    let rounds = (l / mu) * hetero_max * (init / eps2).ln();
    let grads_per_client = s2 * hetero_min / (nf * mu * mu * eps2) * (psi0 / eps2).ln();
    let n_max = if q == 0.0 {
        f64::INFINITY
    } else {
        (mu.powf(2.0 / 3.0) / (q.powf(2.0 / 3.0) * epsilon.powf(2.0 / 3.0))).min((l * mu).sqrt() / (q * epsilon))
    };
    Ok(ComplexityRecipe {
        gamma,
        local_steps,
        rounds,
        grads_per_client,
        n_max,
        exceeds_n_max: nf > n_max,
    })
}

pub(crate) fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "# {name}");
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
}

impl StationaryEstimate {
    pub fn trace_cov_theta(&self) -> f64 {
        self.cov_theta.trace()
    }

    /// Key-value scalars followed by `# name` matrix blocks in row-major CSV.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "gamma = {}", fmt_f64(self.gamma));
        let _ = writeln!(out, "local_steps = {}", self.local_steps);
        let _ = writeln!(out, "burn_in_rounds = {}", self.burn_in_rounds);
        let _ = writeln!(out, "n_samples = {}", self.n_samples);
        let _ = writeln!(out, "thinning = {}", self.thinning);
        let _ = writeln!(out, "trace_cov_theta = {}", fmt_f64(self.trace_cov_theta()));
        let _ = writeln!(out, "bias_norm = {}", fmt_f64(self.bias_theta.norm()));
        let _ = writeln!(out, "se_bias_norm = {}", fmt_f64(self.se_bias.norm()));
        write_matrix(&mut out, "bias_theta", &DMatrix::from_row_slice(1, self.bias_theta.len(), self.bias_theta.as_slice()));
        write_matrix(&mut out, "se_bias", &DMatrix::from_row_slice(1, self.se_bias.len(), self.se_bias.as_slice()));
        write_matrix(&mut out, "cov_theta", &self.cov_theta);
        for (c, m) in self.cov_theta_xi.iter().enumerate() {
            write_matrix(&mut out, &format!("cov_theta_xi[{c}]"), m);
        }
        for ((c, c2), m) in &self.cov_xi {
            write_matrix(&mut out, &format!("cov_xi[{c},{c2}]"), m);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::ClientDataset;
    use crate::objectives::{Batch, Loss, Problem};
    use crate::optimum::{certify, DEFAULT_TOLERANCE};

    fn homogeneous(n: usize, batch: Batch) -> Problem {
        let c = ClientDataset::new(0, vec![1.0, 0.2, -0.3, 1.5, 0.7, -1.0, 2.0, 0.1], vec![1.0, -0.5, 0.3, 2.0], 2).unwrap();
        let clients = (0..n)
            .map(|k| {
                let mut c = c.clone();
                c.client_id = k;
                c
            })
            .collect();
        Problem::new(clients, Loss::Quadratic, 0.1, batch).unwrap()
    }

    #[test]
    fn quadratic_bias_prediction_is_exactly_zero() {
        let cert = certify(&homogeneous(3, Batch::Sampled(1)), DEFAULT_TOLERANCE).unwrap();
        let p = predict_first_order(&cert, 0.05, 4, 3).unwrap();
        assert!(p.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn homogeneous_clients_cross_terms() {
        let cert = certify(&homogeneous(4, Batch::Sampled(2)), DEFAULT_TOLERANCE).unwrap();
        let p = predict_first_order(&cert, 0.05, 3, 4).unwrap();
        for m in &p.cov_theta_xi {
            assert!(m.amax() < 1e-15);
        }
        let expected = &cert.sigma_eps_avg * (-1.0 / 12.0);
        assert!((p.cov_xi(0, 2) - expected).amax() < 1e-15);
    }

    #[test]
    fn doubling_clients_halves_theta_covariance() {
        let cert = certify(&homogeneous(2, Batch::Sampled(1)), DEFAULT_TOLERANCE).unwrap();
        let a = predict_first_order(&cert, 0.05, 3, 4).unwrap();
        let b = predict_first_order(&cert, 0.05, 3, 8).unwrap();
        assert!((a.cov_theta * 0.5 - b.cov_theta).amax() < 1e-18);
    }

    #[test]
    fn control_variate_predictions_sum_to_zero_across_partners() {
        // Σ_c' Σ̄ξ_{c,c'} = 0 because Σ_c ξ_c = Σ_c ξ*_c = 0.
        let c0 = ClientDataset::new(0, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![1.0, 0.0, 2.0], 2).unwrap();
        let c1 = ClientDataset::new(1, vec![2.0, 1.0, -1.0, 0.5, 0.0, 3.0], vec![-1.0, 0.0, 1.0], 2).unwrap();
        let c2 = ClientDataset::new(2, vec![0.3, 0.3, 1.0, -2.0, 4.0, 0.0], vec![0.5, 1.0, -2.0], 2).unwrap();
        let p = Problem::new(vec![c0, c1, c2], Loss::Quadratic, 0.1, Batch::Sampled(2)).unwrap();
        let cert = certify(&p, DEFAULT_TOLERANCE).unwrap();
        let pred = predict_first_order(&cert, 0.02, 5, 3).unwrap();
        for c in 0..3 {
            let total = (0..3).map(|c2| pred.cov_xi(c, c2)).fold(DMatrix::zeros(2, 2), |a, b| a + b);
            assert!(total.amax() < 1e-14, "{total}");
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        let p = homogeneous(2, Batch::Sampled(1));
        let cert = certify(&p, DEFAULT_TOLERANCE).unwrap();
        let cfg = RunConfig {
            gamma: 0.05,
            local_steps: 2,
            n_clients: 2,
            rounds: 0,
            seed: 0,
            algorithm: Algorithm::Scaffold,
        };
        assert!(matches!(estimate_stationary(&p, &cert, &cfg, Some(10), 99, None), Err(Error::Parameter(_))));
    }

    #[test]
    fn pair_subset_is_capped() {
        assert_eq!(xi_pairs(4, 0).len(), 6);
        let many = xi_pairs(32, 7);
        assert_eq!(many.len(), MAX_XI_PAIRS);
        assert_eq!(many, xi_pairs(32, 7));
        assert!(many.iter().all(|(a, b)| a < b));
    }

    #[test]
    fn quadratic_has_no_client_limit() {
        let cert = certify(&homogeneous(2, Batch::Sampled(1)), DEFAULT_TOLERANCE).unwrap();
        let r = complexity_recipe(&cert, 0.01, 2).unwrap();
        assert!(r.n_max.is_infinite());
        assert!(!r.exceeds_n_max);
    }
}
