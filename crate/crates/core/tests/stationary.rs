use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use scaffold_sim::datagen::{make_regression, split_two_blocks, ClientDataset};
use scaffold_sim::optimum::DEFAULT_TOLERANCE;
use scaffold_sim::rng::seeded;
use scaffold_sim::stationary::{complexity_recipe, default_burn_in, estimate_stationary, predict_first_order, sylvester_solve};
use scaffold_sim::{certify, Algorithm, Batch, Loss, OptimumCertificate, Problem, RunConfig};

fn kronecker_solve(h: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let d = h.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    let op = eye.kronecker(h) + h.kronecker(&eye);
    let rhs = DVector::from_column_slice(r.as_slice());
    let x = op.lu().solve(&rhs).unwrap();
    DMatrix::from_column_slice(d, d, x.as_slice())
}

#[test]
fn sylvester_agrees_with_kronecker_system() {
    let mut rng = seeded(8);
    for k in 0..20 {
        let d = 1 + (k * 5) % 12;
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let h = &a * a.transpose() + DMatrix::identity(d, d) * 0.05;
        let b = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = &b * b.transpose();
        let x = sylvester_solve(&h, &r).unwrap();
        let residual = (&h * &x + &x * &h - &r).norm() / r.norm();
        assert!(residual <= 1e-10, "d = {d}: {residual}");
        let reference = kronecker_solve(&h, &r);
        assert!((&x - &reference).norm() <= 1e-8 * reference.norm());
    }
}

fn desk_problem(n: usize, batch: Batch) -> Problem {
    let (a, _) = make_regression(50 * n, 4, 2, 5.0, 61).unwrap();
    let (b, _) = make_regression(50 * n, 4, 4, 5.0, 62).unwrap();
    Problem::new(split_two_blocks(&a, &b, n).unwrap(), Loss::Quadratic, 1.0, batch).unwrap()
}

fn scaffold(gamma: f64, local_steps: usize, n: usize) -> RunConfig {
    RunConfig {
        gamma,
        local_steps,
        n_clients: n,
        rounds: 0,
        seed: 4,
        algorithm: Algorithm::Scaffold,
    }
}

#[test]
fn exact_gradients_collapse_to_the_optimum() {
    let p = desk_problem(4, Batch::Full);
    let cert = certify(&p, DEFAULT_TOLERANCE).unwrap();
    let gamma = 0.1 / cert.l_smooth;
    let burn_in = 30 * default_burn_in(gamma, cert.mu, 5);
    let est = estimate_stationary(&p, &cert, &scaffold(gamma, 5, 4), Some(burn_in), 200, None).unwrap();
    assert!(est.bias_theta.norm() < 1e-9);
    assert!(est.cov_theta.norm() < 1e-18);
    for m in est.cov_xi.values() {
        assert!(m.norm() < 1e-12);
    }
    let pred = predict_first_order(&cert, 0.1 / cert.l_smooth, 5, 4).unwrap();
    assert_eq!(pred.cov_theta.norm(), 0.0);
}

#[test]
fn control_variate_fluctuations_shrink_with_local_steps() {
    let n = 4;
    let p = desk_problem(n, Batch::Sampled(5));
    let cert = certify(&p, DEFAULT_TOLERANCE).unwrap();
    let gamma = 0.02 / cert.l_smooth;
    let per_client = |h: usize| {
        let est = estimate_stationary(&p, &cert, &scaffold(gamma, h, n), None, 20_000, None).unwrap();
        (0..n).map(|c| est.cov_xi[&(c, c)].trace()).sum::<f64>() / n as f64
    };
    let (v10, v20) = (per_client(10), per_client(20));
    for (h, v) in [(10.0, v10), (20.0, v20)] {
        assert!(v <= 54.0 * cert.l_smooth * cert.sigma_star_sq / (cert.mu * h));
    }
    let ratio = v20 / v10;
    assert!((0.35..0.65).contains(&ratio), "ratio {ratio}");
}

#[test]
fn predicted_moments_respect_the_sum_zero_constraint() {
    let n = 6;
    let cert = certify(&desk_problem(n, Batch::Sampled(3)), DEFAULT_TOLERANCE).unwrap();
    let pred = predict_first_order(&cert, 0.01, 7, n).unwrap();
    let cross: DMatrix<f64> = pred.cov_theta_xi.iter().sum();
    assert!(cross.norm() <= 1e-10 * pred.cov_theta_xi[0].norm());
    for c in 0..n {
        let row: DMatrix<f64> = (0..n).map(|c2| pred.cov_xi(c, c2)).sum();
        assert!(row.norm() <= 1e-10 * pred.cov_xi(c, c).norm());
    }
    assert_eq!(pred.bias.norm(), 0.0);
}

fn recipe_cert(identical: bool) -> OptimumCertificate {
    let p = if identical {
        let (a, _) = make_regression(80, 4, 2, 5.0, 70).unwrap();
        let clients = (0..4)
            .map(|k| ClientDataset::from_matrix(k, &a.features, &a.targets).unwrap())
            .collect();
        Problem::new(clients, Loss::Quadratic, 1.0, Batch::Sampled(2)).unwrap()
    } else {
        desk_problem(4, Batch::Sampled(2))
    };
    certify(&p, DEFAULT_TOLERANCE).unwrap()
}

#[test]
fn halving_accuracy_scales_the_recipe() {
    let cert = recipe_cert(false);
    let eps = 1e-3;
    let r1 = complexity_recipe(&cert, eps, 4).unwrap();
    let r2 = complexity_recipe(&cert, eps / 2.0, 4).unwrap();
    assert!(r1.local_steps > 1.0);
    approx::assert_relative_eq!(r2.gamma, r1.gamma / 4.0, max_relative = 1e-12);
    approx::assert_relative_eq!(r2.local_steps, r1.local_steps * 4.0, max_relative = 1e-12);
    let step = cert.l_smooth / cert.mu * (cert.zeta2 / cert.mu).max(1.0) * 4f64.ln();
    approx::assert_relative_eq!(r2.rounds - r1.rounds, step, max_relative = 1e-9);
    assert!(r1.n_max.is_infinite() && !r1.exceeds_n_max);
}

#[test]
fn homogeneous_clients_clamp_heterogeneity_factors() {
    let cert = recipe_cert(true);
    assert_eq!(cert.zeta2, 0.0);
    let eps = 1e-3;
    let r = complexity_recipe(&cert, eps, 4).unwrap();
    let s2 = cert.sigma_star_sq;
    let expected_h = (s2 / (4.0 * cert.l_smooth * cert.mu * eps * eps)).max(1.0);
    approx::assert_relative_eq!(r.local_steps, expected_h, max_relative = 1e-12);
    let init = cert.theta_star.norm_squared() + (cert.zeta1 / cert.l_smooth).powi(2);
    approx::assert_relative_eq!(r.rounds, cert.l_smooth / cert.mu * (init / (eps * eps)).ln(), max_relative = 1e-12);
    // Large epsilon drives H below one, where it is clamped.
    assert_eq!(complexity_recipe(&cert, 1e3, 4).unwrap().local_steps, 1.0);
}
