// Stationary variance of θ at a fixed step size for growing client counts.
// N · trace(Σ̄θ) stays roughly constant.

use scaffold_sim::harness::{parse_config_str, speedup_rows};

const CONFIG: &str = include_str!("../configs/speedup.toml");

fn main() -> scaffold_sim::Result<()> {
    let cfg = parse_config_str(CONFIG)?;
    let (rows, meta) = speedup_rows(&cfg)?;
    print!("{meta}");
    println!("{:>4} {:>14} {:>14} {:>14}", "N", "trace", "predicted", "N * trace");
    for r in rows {
        println!(
            "{:>4} {:>14.4e} {:>14.4e} {:>14.4e}",
            r.n_clients,
            r.trace_cov_theta,
            r.predicted_trace,
            r.n_clients as f64 * r.trace_cov_theta
        );
    }
    Ok(())
}
