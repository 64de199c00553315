// Two Scaffold chains driven by the same noise, one started at zero and one
// at the optimum. Their squared Λ-distance shrinks at least geometrically.

use scaffold_sim::harness::{coupling_curve, parse_config_str};

const CONFIG: &str = include_str!("../configs/coupling.toml");

pub fn run() -> scaffold_sim::Result<()> {
    let cfg = parse_config_str(CONFIG)?;
    let (curve, meta) = coupling_curve(&cfg)?;
    print!("{meta}");
    println!("gamma = {:.4e}, mu = {:.4e}, factor per round = {:.4}", curve.gamma, curve.mu, curve.factor);
    println!("{:>5} {:>12} {:>12}", "t", "mean D_t", "bound");
    for t in (0..curve.mean_d.len()).step_by(20) {
        println!("{t:>5} {:>12.4e} {:>12.4e}", curve.mean_d[t], curve.bound_d[t]);
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
