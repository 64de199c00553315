//! ℓ2-regularized least squares and logistic regression with analytic
//! derivatives up to third order and exact minibatch-noise covariance.
//!
//! Per-record losses (labels y ∈ {−1, +1} for logistic):
//!
//! ```text
//! quadratic: ½(xᵀθ − y)² + (λ/2)‖θ‖²
//! logistic:  log(1 + exp(−y xᵀθ)) + (λ/2)‖θ‖²
//! ```
//!
//! A client's loss is the average over its records. Minibatches are drawn
//! uniformly with replacement, so the gradient noise covariance is exactly
//! `1/b` times the per-record gradient covariance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::datagen::ClientDataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Quadratic,
    Logistic,
}

impl Loss {
    pub fn name(&self) -> &'static str {
        match self {
            Loss::Quadratic => "quadratic",
            Loss::Logistic => "logistic",
        }
    }
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(Loss::Quadratic),
            "logistic" => Ok(Loss::Logistic),
            other => Err(Error::Parameter(format!("unknown loss `{other}`"))),
        }
    }
}

/// How local gradients are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batch {
    /// Average of `b` records drawn uniformly with replacement.
    Sampled(usize),
    /// Exact client gradient; the chain becomes deterministic.
    Full,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub clients: Vec<ClientDataset>,
    pub loss: Loss,
    pub l2_weight: f64,
    pub batch: Batch,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Maximum of |σ(1−σ)(1−2σ)| over the real line.
pub const LOGISTIC_THIRD_MAX: f64 = 0.096_225_044_864_937_63; // 1 / (6√3)

impl Problem {
    /// `l2_weight` may be zero for hand-built examples; data must then supply
    /// the curvature.
    pub fn new(clients: Vec<ClientDataset>, loss: Loss, l2_weight: f64, batch: Batch) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::Parameter("problem needs at least one client".into()));
        }
        let d = clients[0].dim();
        if let Some(c) = clients.iter().find(|c| c.dim() != d) {
            return Err(Error::Shape(format!(
                "client {} has dimension {}, expected {d}",
                c.client_id,
                c.dim()
            )));
        }
        if !(l2_weight >= 0.0 && l2_weight.is_finite()) {
            return Err(Error::Parameter(format!("l2 weight must be >= 0, got {l2_weight}")));
        }
        if let Batch::Sampled(0) = batch {
            return Err(Error::Parameter("batch size must be >= 1".into()));
        }
        if loss == Loss::Logistic {
            if let Some(c) = clients.iter().find(|c| !c.is_classification()) {
                return Err(Error::Parameter(format!(
                    "client {} has labels outside {{-1, +1}}",
                    c.client_id
                )));
            }
        }
        Ok(Self {
            clients,
            loss,
            l2_weight,
            batch,
        })
    }

    pub fn dim(&self) -> usize {
        self.clients[0].dim()
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn with_batch(&self, batch: Batch) -> Self {
        Self {
            batch,
            ..self.clone()
        }
    }

    fn client(&self, client: usize) -> &ClientDataset {
        &self.clients[client]
    }

    /// Derivative of the unregularized record loss along x: the record
    /// gradient is `scale · x`.
    #[inline]
    fn record_scale(&self, x: &[f64], y: f64, theta: &[f64]) -> f64 {
        let m = dot(x, theta);
        match self.loss {
            Loss::Quadratic => m - y,
            Loss::Logistic => -y * sigmoid(-y * m),
        }
    }

    fn record_loss(&self, x: &[f64], y: f64, theta: &[f64]) -> f64 {
        let m = dot(x, theta);
        match self.loss {
            Loss::Quadratic => 0.5 * (m - y).powi(2),
            Loss::Logistic => softplus(-y * m),
        }
    }

    /// Curvature weight: record Hessian is `weight · x xᵀ`.
    #[inline]
    fn record_curvature(&self, x: &[f64], y: f64, theta: &[f64]) -> f64 {
        match self.loss {
            Loss::Quadratic => 1.0,
            Loss::Logistic => {
                let s = sigmoid(y * dot(x, theta));
                s * (1.0 - s)
            }
        }
    }

    pub fn loss(&self, client: usize, theta: &DVector<f64>) -> f64 {
        let data = self.client(client);
        let t = theta.as_slice();
        let total: f64 = (0..data.len()).map(|i| self.record_loss(data.row(i), data.target(i), t)).sum();
        total / data.len() as f64 + 0.5 * self.l2_weight * theta.norm_squared()
    }

    /// Global objective: average of client losses.
    pub fn global_loss(&self, theta: &DVector<f64>) -> f64 {
        (0..self.n_clients()).map(|c| self.loss(c, theta)).sum::<f64>() / self.n_clients() as f64
    }

    /// Per-record gradients without the ℓ2 term, one column per record.
    fn record_gradients(&self, client: usize, theta: &DVector<f64>) -> DMatrix<f64> {
        let data = self.client(client);
        let t = theta.as_slice();
        let mut g = DMatrix::zeros(self.dim(), data.len());
        for i in 0..data.len() {
            let x = data.row(i);
            let s = self.record_scale(x, data.target(i), t);
            for (j, v) in x.iter().enumerate() {
                g[(j, i)] = s * v;
            }
        }
        g
    }

    pub fn full_gradient(&self, client: usize, theta: &DVector<f64>) -> DVector<f64> {
        let data = self.client(client);
        let mut out = DVector::zeros(self.dim());
        let t = theta.as_slice();
        for i in 0..data.len() {
            let x = data.row(i);
            let s = self.record_scale(x, data.target(i), t);
            for (o, v) in out.iter_mut().zip(x) {
                *o += s * v;
            }
        }
        out /= data.len() as f64;
        out.axpy(self.l2_weight, theta, 1.0);
        out
    }

    pub fn global_gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let grads: Vec<_> = (0..self.n_clients()).map(|c| self.full_gradient(c, theta)).collect();
        crate::chain::mean_vectors(&grads)
    }

    /// Minibatch gradient written into `out`, drawing record indices from `rng`.
    pub fn stochastic_gradient_into<R: Rng>(&self, client: usize, theta: &[f64], rng: &mut R, out: &mut [f64]) {
        let data = self.client(client);
        match self.batch {
            Batch::Full => {
                let g = self.full_gradient(client, &DVector::from_column_slice(theta));
                out.copy_from_slice(g.as_slice());
            }
            Batch::Sampled(b) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let n = data.len();
                for _ in 0..b {
                    let i = rng.random_range(0..n);
                    let x = data.row(i);
                    let s = self.record_scale(x, data.target(i), theta);
                    for (o, v) in out.iter_mut().zip(x) {
                        *o += s * v;
                    }
                }
                let inv_b = 1.0 / b as f64;
                for (o, t) in out.iter_mut().zip(theta) {
                    *o = *o * inv_b + self.l2_weight * t;
                }
            }
        }
    }

    pub fn stochastic_gradient(&self, client: usize, theta: &DVector<f64>, stream: &RngStream) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.stochastic_gradient_into(client, theta.as_slice(), &mut stream.rng(), out.as_mut_slice());
        out
    }

    pub fn hessian(&self, client: usize, theta: &DVector<f64>) -> DMatrix<f64> {
        let data = self.client(client);
        let d = self.dim();
        let t = theta.as_slice();
        let mut h = DMatrix::zeros(d, d);
        for i in 0..data.len() {
            let x = data.row(i);
            let w = self.record_curvature(x, data.target(i), t);
            for a in 0..d {
                let wa = w * x[a];
                for b in 0..d {
                    h[(a, b)] += wa * x[b];
                }
            }
        }
        h /= data.len() as f64;
        for a in 0..d {
            h[(a, a)] += self.l2_weight;
        }
        h
    }

    pub fn global_hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim(), self.dim());
        for c in 0..self.n_clients() {
            h += self.hessian(c, theta);
        }
        h / self.n_clients() as f64
    }

    /// ∇³f_c(θ)[M]: the vector with entries Σ_{jk} ∂³f/∂θ_i∂θ_j∂θ_k · M_jk.
    pub fn third_derivative_apply(&self, client: usize, theta: &DVector<f64>, m: &DMatrix<f64>) -> Result<DVector<f64>> {
        let d = self.dim();
        if m.shape() != (d, d) {
            return Err(Error::Shape(format!("contraction matrix must be {d}x{d}")));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        if (m - m.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Parameter("third-derivative contraction needs a symmetric matrix".into()));
        }
        let mut out = DVector::zeros(d);
        if self.loss == Loss::Quadratic {
            return Ok(out);
        }
        let data = self.client(client);
        let t = theta.as_slice();
        let mut mx = DVector::zeros(d);
        for i in 0..data.len() {
            let x = data.row(i);
            let y = data.target(i);
            let s = sigmoid(y * dot(x, t));
            let w = s * (1.0 - s) * (1.0 - 2.0 * s) * y;
            let xv = DVector::from_column_slice(x);
            m.mul_to(&xv, &mut mx);
            let quad = xv.dot(&mx);
            out.axpy(w * quad, &xv, 1.0);
        }
        Ok(out / data.len() as f64)
    }

    /// Covariance of the minibatch gradient noise of `client` at θ.
    pub fn noise_covariance_at(&self, client: usize, theta: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let b = match self.batch {
            Batch::Full => return DMatrix::zeros(d, d),
            Batch::Sampled(b) => b,
        };
        let g = self.record_gradients(client, theta);
        let n = g.ncols();
        let mean = g.column_mean();
        let mut centered = g;
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        let cov = &centered * centered.transpose() / (n as f64 * b as f64);
        (&cov + cov.transpose()) * 0.5
    }
}
