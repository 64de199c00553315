// Runs any experiment config and prints its CSV, like the command-line tool.
//
// cargo run --release --example run_config -- configs/figure1.toml

use std::path::PathBuf;

use scaffold_sim::harness::{parse_config, run_task};

pub fn run_path(path: &std::path::Path) -> scaffold_sim::Result<()> {
    let cfg = parse_config(path)?;
    print!("{}", run_task(&cfg, 1)?);
    Ok(())
}

pub fn run() -> scaffold_sim::Result<()> {
    run_path(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/coupling.toml"))
}

fn main() {
    let result = match std::env::args().nth(1) {
        Some(path) => run_path(PathBuf::from(path).as_path()),
        None => run(),
    };
    if let Err(e) = result {
        eprintln!("error[{}]: {e}", e.class());
        std::process::exit(1);
    }
}
