use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use super::config::{ExperimentConfig, ProblemSpec, Task};
use crate::algorithms::{coupled_run, run};
use crate::chain::{Algorithm, ChainState, RunConfig};
use crate::datagen::{fmt_f64, make_classification, make_regression, split_two_blocks, Dataset};
use crate::error::{Error, Result};
use crate::objectives::{Loss, Problem};
use crate::optimum::{certify, OptimumCertificate};
use crate::stationary::{complexity_recipe, estimate_stationary, predict_first_order, write_matrix};

fn source_dataset(spec: &ProblemSpec, n_records: usize, informative: usize, seed: u64) -> Result<Dataset> {
    match spec.loss {
        Loss::Quadratic => Ok(make_regression(n_records, spec.dim, informative, spec.noise_std, seed)?.0),
        Loss::Logistic => make_classification(n_records, spec.dim, informative, spec.class_sep, seed),
    }
}

fn gram_eigen_range(problem: &Problem) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for c in &problem.clients {
        let x = c.features_matrix();
        let gram = x.transpose() * &x / c.len() as f64;
        let eig = SymmetricEigen::new(gram).eigenvalues;
        lo = lo.min(eig.min());
        hi = hi.max(eig.max());
    }
    (lo, hi)
}

/// Builds the two-block heterogeneous problem for `n_clients` clients.
pub fn build_problem(spec: &ProblemSpec, n_clients: usize) -> Result<Problem> {
    if n_clients == 0 || !n_clients.is_multiple_of(2) {
        return Err(Error::Parameter(format!("n_clients must be even and positive, got {n_clients}")));
    }
    let per_block = spec.records_per_client * n_clients / 2;
    let a = source_dataset(spec, per_block, spec.informative_a, spec.seed_a)?;
    let b = source_dataset(spec, per_block, spec.informative_b, spec.seed_b)?;
    let mut clients = split_two_blocks(&a, &b, n_clients)?;
    if spec.feature_scale_min != 1.0 {
        let d = spec.dim;
        let scales: Vec<f64> = (0..d)
            .map(|j| if d == 1 { 1.0 } else { spec.feature_scale_min.powf(j as f64 / (d - 1) as f64) })
            .collect();
        for c in &mut clients {
            c.scale_columns(&scales);
        }
    }
    let mut problem = Problem::new(clients, spec.loss, spec.l2, spec.batch)?;
    if let Some(target) = spec.target_condition {
        // (mu0 + l2) / (L0 + l2) = target
        let (mu0, l0) = gram_eigen_range(&problem);
        let l2 = (target * l0 - mu0) / (1.0 - target);
        if l2 < 0.0 {
            return Err(Error::Validation {
                key: "problem.target_condition".into(),
                reason: format!("unreachable: data alone give mu/L = {:.4}", mu0 / l0),
            });
        }
        problem.l2_weight = l2;
    }
    Ok(problem)
}

/// Problem and certificate for one client count.
pub fn certified_problem(spec: &ProblemSpec, n_clients: usize) -> Result<(Problem, OptimumCertificate)> {
    let problem = build_problem(spec, n_clients).map_err(|e| e.context(format!("building problem for N = {n_clients}")))?;
    let cert = certify(&problem, spec.solver_tolerance).map_err(|e| e.context(format!("solving optimum for N = {n_clients}")))?;
    Ok((problem, cert))
}

fn header(cfg: &ExperimentConfig) -> String {
    let p = &cfg.problem;
    let mut out = String::new();
    let _ = writeln!(out, "# task = {}", cfg.task.name());
    let _ = writeln!(
        out,
        "# problem: loss = {}, dim = {}, records_per_client = {}, informative = ({}, {}), seeds = ({}, {}), noise_std = {}, class_sep = {}",
        p.loss.name(),
        p.dim,
        p.records_per_client,
        p.informative_a,
        p.informative_b,
        p.seed_a,
        p.seed_b,
        p.noise_std,
        p.class_sep
    );
    out
}

fn regime_line(out: &mut String, n: usize, cfg: &RunConfig, cert: &OptimumCertificate, l2: f64) {
    let cond = cfg.step_conditions(cert.mu, cert.l_smooth);
    let _ = writeln!(
        out,
        "# N = {n}: l2 = {}, gamma = {}, H = {}, mu = {}, L = {}, gamma*H*L = {}, {}",
        fmt_f64(l2),
        fmt_f64(cfg.gamma),
        cfg.local_steps,
        fmt_f64(cert.mu),
        fmt_f64(cert.l_smooth),
        fmt_f64(cfg.gamma * cfg.local_steps as f64 * cert.l_smooth),
        cond
    );
}

fn run_config(cfg: &ExperimentConfig, cert: &OptimumCertificate, n: usize, seed: u64, algorithm: Algorithm) -> RunConfig {
    RunConfig {
        gamma: cfg.run.step_size.resolve(cert.l_smooth),
        local_steps: cfg.run.local_steps,
        n_clients: n,
        rounds: cfg.run.rounds,
        seed,
        algorithm,
    }
}

fn certify_all(cfg: &ExperimentConfig) -> Result<Vec<(usize, Problem, OptimumCertificate)>> {
    cfg.run
        .n_clients
        .par_iter()
        .map(|&n| certified_problem(&cfg.problem, n).map(|(p, c)| (n, p, c)))
        .collect()
}

/// One curve of the MSE figure.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub algorithm: Algorithm,
    pub n_clients: usize,
    pub seed: u64,
    pub mse: Vec<f64>,
}

/// Per-(algorithm, N) mean and standard deviation (n − 1 denominator) over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub algorithm: Algorithm,
    pub n_clients: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn aggregate(curves: &[CurveRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(Algorithm, usize)> = curves.iter().map(|c| (c.algorithm, c.n_clients)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(algorithm, n)| {
            let group: Vec<&CurveRow> = curves.iter().filter(|c| c.algorithm == algorithm && c.n_clients == n).collect();
            let len = group[0].mse.len();
            let k = group.len() as f64;
            let mean: Vec<f64> = (0..len).map(|t| group.iter().map(|c| c.mse[t]).sum::<f64>() / k).collect();
            let std = (0..len)
                .map(|t| {
                    if group.len() < 2 {
                        return 0.0;
                    }
                    let ss: f64 = group.iter().map(|c| (c.mse[t] - mean[t]).powi(2)).sum();
                    (ss / (k - 1.0)).sqrt()
                })
                .collect();
            AggregateRow {
                algorithm,
                n_clients: n,
                mean,
                std,
            }
        })
        .collect()
}

/// Mean of the last `fraction` of a curve.
pub fn plateau(curve: &[f64], fraction: f64) -> f64 {
    let k = ((curve.len() as f64 * fraction).ceil() as usize).clamp(1, curve.len());
    curve[curve.len() - k..].iter().sum::<f64>() / k as f64
}

/// Runs every (algorithm, N, seed) cell and returns the curves sorted by
/// (algorithm, N, seed).
pub fn figure1_curves(cfg: &ExperimentConfig) -> Result<(Vec<CurveRow>, String)> {
    let problems = certify_all(cfg)?;
    let mut cells = Vec::new();
    for (i, (n, _, _)) in problems.iter().enumerate() {
        for &alg in &cfg.run.algorithms {
            for &seed in &cfg.run.seeds {
                cells.push((i, *n, alg, seed));
            }
        }
    }
    let mut curves: Vec<CurveRow> = cells
        .par_iter()
        .map(|&(i, n, algorithm, seed)| {
            let (_, problem, cert) = &problems[i];
            let rc = run_config(cfg, cert, n, seed, algorithm);
            let traj = run(problem, cert, &rc)
                .map_err(|e| e.context(format!("{} N = {n} seed = {seed}", algorithm.name())))?;
            Ok(CurveRow {
                algorithm,
                n_clients: n,
                seed,
                mse: traj.mse(),
            })
        })
        .collect::<Result<_>>()?;
    curves.sort_by_key(|c| (c.algorithm, c.n_clients, c.seed));
    let mut meta = String::new();
    for (n, problem, cert) in &problems {
        let rc = run_config(cfg, cert, *n, 0, Algorithm::Scaffold);
        regime_line(&mut meta, *n, &rc, cert, problem.l2_weight);
    }
    Ok((curves, meta))
}

pub fn run_figure1(cfg: &ExperimentConfig) -> Result<String> {
    let (curves, meta) = figure1_curves(cfg)?;
    let mut out = header(cfg);
    out.push_str(&meta);
    out.push_str("# per-run\nalgorithm,N,seed,t,mse\n");
    for c in &curves {
        for (t, v) in c.mse.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", c.algorithm.name(), c.n_clients, c.seed, t, fmt_f64(*v));
        }
    }
    out.push_str("# aggregate\nalgorithm,N,t,mean_mse,std_mse\n");
    for a in aggregate(&curves) {
        for t in 0..a.mean.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                a.algorithm.name(),
                a.n_clients,
                t,
                fmt_f64(a.mean[t]),
                fmt_f64(a.std[t])
            );
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupRow {
    pub n_clients: usize,
    pub trace_cov_theta: f64,
    pub predicted_trace: f64,
}

pub fn speedup_rows(cfg: &ExperimentConfig) -> Result<(Vec<SpeedupRow>, String)> {
    let problems = certify_all(cfg)?;
    let seed = cfg.run.seeds[0];
    let rows = problems
        .par_iter()
        .map(|(n, problem, cert)| {
            let rc = run_config(cfg, cert, *n, seed, Algorithm::Scaffold);
            let est = estimate_stationary(problem, cert, &rc, cfg.run.burn_in, cfg.run.samples, Some(cfg.run.thinning))
                .map_err(|e| e.context(format!("stationary estimate for N = {n}")))?;
            let pred = predict_first_order(cert, rc.gamma, rc.local_steps, *n)?;
            Ok(SpeedupRow {
                n_clients: *n,
                trace_cov_theta: est.trace_cov_theta(),
                predicted_trace: pred.cov_theta.trace(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meta = String::new();
    for (n, problem, cert) in &problems {
        let rc = run_config(cfg, cert, *n, seed, Algorithm::Scaffold);
        regime_line(&mut meta, *n, &rc, cert, problem.l2_weight);
    }
    Ok((rows, meta))
}

pub fn run_speedup(cfg: &ExperimentConfig) -> Result<String> {
    let (rows, meta) = speedup_rows(cfg)?;
    let mut out = header(cfg);
    out.push_str(&meta);
    out.push_str("N,trace_cov_theta,predicted_trace\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.n_clients, fmt_f64(r.trace_cov_theta), fmt_f64(r.predicted_trace));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingCurve {
    pub mean_d: Vec<f64>,
    pub bound_d: Vec<f64>,
    /// Contraction factor per round, (1 − γμ/4)^H.
    pub factor: f64,
    pub gamma: f64,
    pub mu: f64,
}

/// Couples a chain started at θ = 0, ξ = 0 with one started at X*, for every
/// seed, and averages the squared Λ-distances.
pub fn coupling_curve(cfg: &ExperimentConfig) -> Result<(CouplingCurve, String)> {
    let n = cfg.run.n_clients[0];
    let (problem, cert) = certified_problem(&cfg.problem, n)?;
    let algorithm = cfg.run.algorithms[0];
    let per_seed: Vec<Vec<f64>> = cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| {
            let rc = run_config(cfg, &cert, n, seed, algorithm);
            let start = ChainState::with_zero_controls(DVector::zeros(problem.dim()), n);
            coupled_run(&problem, &rc, start, cert.optimal_state()).map_err(|e| e.context(format!("coupled run seed = {seed}")))
        })
        .collect::<Result<_>>()?;
    let k = per_seed.len() as f64;
    let len = cfg.run.rounds + 1;
    let mean_d: Vec<f64> = (0..len).map(|t| per_seed.iter().map(|d| d[t]).sum::<f64>() / k).collect();
    let rc = run_config(cfg, &cert, n, 0, algorithm);
    let mu = cert.mu_global;
    let factor = (1.0 - rc.gamma * mu / 4.0).powi(rc.local_steps as i32);
    let bound_d = (0..len).map(|t| mean_d[0] * factor.powi(t as i32)).collect();
    let mut meta = String::new();
    regime_line(&mut meta, n, &rc, &cert, problem.l2_weight);
    Ok((
        CouplingCurve {
            mean_d,
            bound_d,
            factor,
            gamma: rc.gamma,
            mu,
        },
        meta,
    ))
}

pub fn run_coupling(cfg: &ExperimentConfig) -> Result<String> {
    let (curve, meta) = coupling_curve(cfg)?;
    let mut out = header(cfg);
    out.push_str(&meta);
    let _ = writeln!(out, "# contraction factor per round = {}", fmt_f64(curve.factor));
    out.push_str("t,mean_D,bound_D\n");
    for t in 0..curve.mean_d.len() {
        let _ = writeln!(out, "{},{},{}", t, fmt_f64(curve.mean_d[t]), fmt_f64(curve.bound_d[t]));
    }
    Ok(out)
}

fn vector_block(out: &mut String, name: &str, v: &DVector<f64>) {
    write_matrix(out, name, &DMatrix::from_row_slice(1, v.len(), v.as_slice()));
}

pub fn run_stationary(cfg: &ExperimentConfig) -> Result<String> {
    let n = cfg.run.n_clients[0];
    let (problem, cert) = certified_problem(&cfg.problem, n)?;
    let rc = run_config(cfg, &cert, n, cfg.run.seeds[0], Algorithm::Scaffold);
    let est = estimate_stationary(&problem, &cert, &rc, cfg.run.burn_in, cfg.run.samples, Some(cfg.run.thinning))?;
    let pred = predict_first_order(&cert, rc.gamma, rc.local_steps, n)?;
    let mut out = header(cfg);
    regime_line(&mut out, n, &rc, &cert, problem.l2_weight);
    out.push_str(&cert.report());
    let _ = writeln!(out, "crude_bound_trace = {}", fmt_f64(8.0 * rc.gamma * cert.sigma_star_sq / cert.mu));
    let _ = writeln!(out, "predicted_trace_cov_theta = {}", fmt_f64(pred.cov_theta.trace()));
    out.push_str(&est.report());
    write_matrix(&mut out, "predicted_cov_theta", &pred.cov_theta);
    vector_block(&mut out, "predicted_bias", &pred.bias);
    Ok(out)
}

pub fn run_predict(cfg: &ExperimentConfig) -> Result<String> {
    let mut out = header(cfg);
    for (n, problem, cert) in certify_all(cfg)? {
        let rc = run_config(cfg, &cert, n, 0, Algorithm::Scaffold);
        let pred = predict_first_order(&cert, rc.gamma, rc.local_steps, n)?;
        regime_line(&mut out, n, &rc, &cert, problem.l2_weight);
        out.push_str(&cert.report());
        let _ = writeln!(out, "predicted_trace_cov_theta = {}", fmt_f64(pred.cov_theta.trace()));
        write_matrix(&mut out, &format!("N={n} cov_theta"), &pred.cov_theta);
        vector_block(&mut out, &format!("N={n} bias"), &pred.bias);
        for (c, m) in pred.cov_theta_xi.iter().enumerate() {
            write_matrix(&mut out, &format!("N={n} cov_theta_xi[{c}]"), m);
        }
        for (c, m) in pred.cov_xi_diag.iter().enumerate() {
            write_matrix(&mut out, &format!("N={n} cov_xi[{c},{c}]"), m);
        }
    }
    Ok(out)
}

pub fn run_complexity(cfg: &ExperimentConfig) -> Result<String> {
    let mut out = header(cfg);
    let _ = writeln!(out, "# epsilon = {}", fmt_f64(cfg.run.epsilon));
    out.push_str("N,gamma,local_steps,rounds,grads_per_client,n_max,exceeds_n_max\n");
    for (n, _, cert) in certify_all(cfg)? {
        let r = complexity_recipe(&cert, cfg.run.epsilon, n)?;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            n,
            fmt_f64(r.gamma),
            fmt_f64(r.local_steps),
            fmt_f64(r.rounds),
            fmt_f64(r.grads_per_client),
            fmt_f64(r.n_max),
            r.exceeds_n_max
        );
    }
    Ok(out)
}

/// Runs the configured task on a dedicated pool of `threads` workers.
pub fn run_task(cfg: &ExperimentConfig, threads: usize) -> Result<String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    pool.install(|| match cfg.task {
        Task::Figure1 => run_figure1(cfg),
        Task::Speedup => run_speedup(cfg),
        Task::Coupling => run_coupling(cfg),
        Task::Stationary => run_stationary(cfg),
        Task::Predict => run_predict(cfg),
        Task::Complexity => run_complexity(cfg),
    })
}
