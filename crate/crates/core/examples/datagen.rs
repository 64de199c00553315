// Generates the two-block federated regression data and round-trips one
// client through CSV.

use scaffold_sim::datagen::{make_regression, split_two_blocks, ClientDataset};

pub fn run() -> scaffold_sim::Result<()> {
    let n_clients = 10;
    let (a, coef_a) = make_regression(100 * n_clients / 2, 20, 2, 10.0, 1)?;
    let (b, coef_b) = make_regression(100 * n_clients / 2, 20, 10, 10.0, 2)?;
    let nonzero = |c: &nalgebra::DVector<f64>| c.iter().filter(|v| **v != 0.0).count();
    println!("block a: {} informative coefficients, block b: {}", nonzero(&coef_a), nonzero(&coef_b));

    let clients = split_two_blocks(&a, &b, n_clients)?;
    for c in &clients {
        let mean_y = c.targets().iter().sum::<f64>() / c.len() as f64;
        println!("client {:2}: {} records, mean target {mean_y:9.3}", c.client_id, c.len());
    }

    let csv = clients[0].to_csv();
    let back = ClientDataset::from_csv(0, csv.as_bytes())?;
    assert_eq!(back, clients[0]);
    println!("client 0 CSV: {} bytes, first line {:?}", csv.len(), csv.lines().next().unwrap_or(""));
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
