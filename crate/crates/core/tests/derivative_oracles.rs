//! Analytic derivatives and noise covariance against finite-difference and
//! Monte-Carlo oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use scaffold_sim::datagen::{make_classification, make_regression, ClientDataset};
use scaffold_sim::rng::{derive_stream, seeded};
use scaffold_sim::{Batch, Loss, Problem};

fn logistic_problem(seed: u64, d: usize) -> Problem {
    let data = make_classification(40, d, d.min(3), 1.0, seed).unwrap();
    let c = ClientDataset::from_matrix(0, &data.features, &data.targets).unwrap();
    Problem::new(vec![c], Loss::Logistic, 0.05, Batch::Sampled(4)).unwrap()
}

fn quadratic_problem(seed: u64, d: usize) -> Problem {
    let (data, _) = make_regression(40, d, 2, 1.0, seed).unwrap();
    let c = ClientDataset::from_matrix(0, &data.features, &data.targets).unwrap();
    Problem::new(vec![c], Loss::Quadratic, 0.05, Batch::Sampled(4)).unwrap()
}

fn random_vec(rng: &mut impl Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn fd_gradient(p: &Problem, theta: &DVector<f64>) -> DVector<f64> {
    let h = 1e-5;
    DVector::from_fn(theta.len(), |i, _| {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[i] += h;
        minus[i] -= h;
        (p.loss(0, &plus) - p.loss(0, &minus)) / (2.0 * h)
    })
}

fn fd_hessian(p: &Problem, theta: &DVector<f64>) -> DMatrix<f64> {
    let h = 1e-5;
    let d = theta.len();
    let mut out = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[j] += h;
        minus[j] -= h;
        let col = (p.full_gradient(0, &plus) - p.full_gradient(0, &minus)) / (2.0 * h);
        out.set_column(j, &col);
    }
    out
}

/// Σ_jk ∂_j ∂²f/∂θ_i∂θ_k M_jk, built from central differences of the Hessian
/// along each basis direction e_j.
fn fd_third(p: &Problem, theta: &DVector<f64>, m: &DMatrix<f64>) -> DVector<f64> {
    let h = 1e-4;
    let d = theta.len();
    let mut out = DVector::zeros(d);
    for j in 0..d {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[j] += h;
        minus[j] -= h;
        let dh = (p.hessian(0, &plus) - p.hessian(0, &minus)) / (2.0 * h);
        // dh[(i, k)] = ∂³f / ∂θ_j ∂θ_i ∂θ_k
        for i in 0..d {
            for k in 0..d {
                out[i] += dh[(i, k)] * m[(j, k)];
            }
        }
    }
    out
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = seeded(100);
    for seed in 0..5 {
        for p in [logistic_problem(seed, 4), quadratic_problem(seed, 4)] {
            let theta = random_vec(&mut rng, 4, 0.5);
            let e = rel_err(&p.full_gradient(0, &theta), &fd_gradient(&p, &theta));
            assert!(e < 1e-6, "{:?} seed {seed}: {e}", p.loss);
        }
    }
}

#[test]
fn hessian_matches_finite_differences_and_is_lambda_convex() {
    let mut rng = seeded(101);
    for seed in 0..5 {
        for p in [logistic_problem(seed, 4), quadratic_problem(seed, 4)] {
            let theta = random_vec(&mut rng, 4, 0.5);
            let h = p.hessian(0, &theta);
            let fd = fd_hessian(&p, &theta);
            let e = (&h - &fd).norm() / fd.norm();
            assert!(e < 1e-5, "{:?} seed {seed}: {e}", p.loss);
            let min = h.symmetric_eigenvalues().min();
            assert!(min >= p.l2_weight - 1e-12);
        }
    }
}

#[test]
fn third_derivative_matches_finite_differences() {
    let mut rng = seeded(102);
    for seed in 0..5 {
        let p = logistic_problem(seed, 4);
        let theta = random_vec(&mut rng, 4, 0.5);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let m = (&a + a.transpose()) * 0.5;
        let analytic = p.third_derivative_apply(0, &theta, &m).unwrap();
        let e = rel_err(&analytic, &fd_third(&p, &theta, &m));
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
}

#[test]
fn minibatch_gradient_is_unbiased() {
    let p = logistic_problem(7, 3);
    let theta = DVector::from_vec(vec![0.3, -0.2, 0.1]);
    let draws = 100_000;
    let mut sum = DVector::zeros(3);
    let mut sum_sq = DVector::zeros(3);
    for k in 0..draws {
        let g = p.stochastic_gradient(0, &theta, &derive_stream(9, k, 0, 0));
        sum_sq += g.component_mul(&g);
        sum += g;
    }
    let mean = &sum / draws as f64;
    let var = &sum_sq / draws as f64 - mean.component_mul(&mean);
    let full = p.full_gradient(0, &theta);
    for j in 0..3 {
        let se = (var[j] / draws as f64).sqrt();
        assert!((mean[j] - full[j]).abs() <= 3.0 * se, "coordinate {j}");
    }
}

#[test]
fn noise_covariance_matches_monte_carlo() {
    for p in [logistic_problem(8, 3), quadratic_problem(8, 3)] {
        let theta = DVector::from_vec(vec![0.2, 0.1, -0.4]);
        let draws = 100_000;
        let full = p.full_gradient(0, &theta);
        let mut emp = DMatrix::zeros(3, 3);
        for k in 0..draws {
            let e = p.stochastic_gradient(0, &theta, &derive_stream(10, k, 0, 0)) - &full;
            emp.ger(1.0, &e, &e, 1.0);
        }
        emp /= draws as f64;
        let exact = p.noise_covariance_at(0, &theta);
        let rel = (&emp - &exact).norm() / exact.norm();
        assert!(rel < 0.05, "{:?}: {rel}", p.loss);
    }
}
