// Step size, local steps, rounds and per-client gradient budget for a target
// accuracy, over a few client counts.

use scaffold_sim::harness::{certified_problem, ProblemSpec};
use scaffold_sim::stationary::complexity_recipe;
use scaffold_sim::Loss;

pub fn run() -> scaffold_sim::Result<()> {
    let spec = ProblemSpec {
        loss: Loss::Logistic,
        dim: 5,
        informative_b: 5,
        ..ProblemSpec::default()
    };
    println!("{:>5} {:>8} {:>11} {:>11} {:>10} {:>13} {:>10}", "N", "eps", "gamma", "H", "rounds", "grads/client", "n_max");
    for n in [2, 10, 50] {
        let (_, cert) = certified_problem(&spec, n)?;
        for eps in [0.1, 0.05] {
            let r = complexity_recipe(&cert, eps, n)?;
            println!(
                "{n:>5} {eps:>8} {:>11.3e} {:>11.1} {:>10.1} {:>13.3e} {:>10.1}{}",
                r.gamma,
                r.local_steps,
                r.rounds,
                r.grads_per_client,
                r.n_max,
                if r.exceeds_n_max { "  (beyond linear speed-up)" } else { "" }
            );
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
