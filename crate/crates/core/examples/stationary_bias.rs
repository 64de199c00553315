// Long-run bias of Scaffold on logistic regression at two step sizes,
// against the first-order prediction. Takes about half a minute.

use scaffold_sim::harness::{certified_problem, parse_config_str};
use scaffold_sim::stationary::{estimate_stationary, predict_first_order};
use scaffold_sim::{Algorithm, RunConfig};

const CONFIG: &str = include_str!("../configs/bias_logistic.toml");

fn main() -> scaffold_sim::Result<()> {
    let cfg = parse_config_str(CONFIG)?;
    let n = cfg.run.n_clients[0];
    let (problem, cert) = certified_problem(&cfg.problem, n)?;
    let gamma0 = cfg.run.step_size.resolve(cert.l_smooth);
    let mut norms = Vec::new();
    for (k, gamma) in [gamma0, gamma0 / 2.0].into_iter().enumerate() {
        let config = RunConfig {
            gamma,
            local_steps: cfg.run.local_steps,
            n_clients: n,
            rounds: 0,
            seed: cfg.run.seeds[0] + k as u64,
            algorithm: Algorithm::Scaffold,
        };
        let est = estimate_stationary(&problem, &cert, &config, cfg.run.burn_in, cfg.run.samples, Some(cfg.run.thinning))?;
        let pred = predict_first_order(&cert, gamma, config.local_steps, n)?;
        let cos = est.bias_theta.dot(&pred.bias) / (est.bias_theta.norm() * pred.bias.norm());
        println!(
            "gamma {gamma:.4e}: |bias| {:.4e} (se {:.1e}), |predicted| {:.4e}, cosine {cos:.3}",
            est.bias_theta.norm(),
            est.se_bias.norm(),
            pred.bias.norm()
        );
        norms.push(est.bias_theta.norm());
    }
    println!("halving gamma divides the bias by {:.2}", norms[0] / norms[1]);
    Ok(())
}
