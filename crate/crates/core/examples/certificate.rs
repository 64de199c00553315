// Builds a heterogeneous logistic problem, solves for θ* and prints the
// constants the theory is stated in.

use scaffold_sim::datagen::{make_classification, split_two_blocks};
use scaffold_sim::optimum::DEFAULT_TOLERANCE;
use scaffold_sim::{certify, Batch, Loss, Problem};

pub fn run() -> scaffold_sim::Result<()> {
    let n_clients = 4;
    let a = make_classification(200 * n_clients / 2, 5, 2, 0.5, 3)?;
    let b = make_classification(200 * n_clients / 2, 5, 5, 0.5, 4)?;
    let problem = Problem::new(split_two_blocks(&a, &b, n_clients)?, Loss::Logistic, 0.01, Batch::Sampled(1))?;
    let cert = certify(&problem, DEFAULT_TOLERANCE)?;
    print!("{}", cert.report());
    println!("condition number mu/L = {:.4}", cert.mu / cert.l_smooth);
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
